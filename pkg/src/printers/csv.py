import csv
from interfaces import FilePrinter
from pathlib import Path

class CsvPrinter(FilePrinter):
	"""
	One file per sheet, named `<stem>_<sheet>.csv` next to the requested path.
	Rows end in a plain newline on every platform.
	"""
	EXTENSIONS = {'.csv'}

	def sheetPath(self, sheet_name: str) -> Path:
		return self.filePath.with_name(f"{self.filePath.stem}_{sheet_name}.csv")

	def printStatistics(self):
		self.filePath.parent.mkdir(parents=True, exist_ok=True)
		for sheet in self.statBook.sheets:
			with open(self.sheetPath(sheet.name), 'w', newline='', encoding='utf-8') as csvfile:
				csv_writer = csv.writer(csvfile, delimiter=',', lineterminator='\n')
				for row in sheet.rows:
					csv_writer.writerow(row.values)

FilePrinter.register(CsvPrinter)
