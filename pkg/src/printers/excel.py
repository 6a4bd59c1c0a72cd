from interfaces import FilePrinter
import math
from openpyxl import Workbook
from openpyxl.utils import get_column_letter

def _cell(value: str):
	""" Numbers go in as numbers so the sheet can be plotted directly """
	try:
		number = float(value)
	except (TypeError, ValueError):
		return value
	if not math.isfinite(number):
		return value
	return int(number) if number.is_integer() and '.' not in value and 'e' not in value.lower() else number

class ExcelPrinter(FilePrinter):
	EXTENSIONS = {'.xlsx'}

	# Column width in characters
	COLUMN_WIDTH = 14

	def printStatistics(self):
		self.filePath.parent.mkdir(parents=True, exist_ok=True)
		workbook = Workbook()
		for sheet in self.statBook.sheets:
			worksheet = workbook.create_sheet(title=sheet.name[:31])
			for row in sheet.rows:
				worksheet.append([_cell(v) for v in row.values])
			if len(sheet.rows) > 0:
				worksheet.freeze_panes = "A2"
				for column in range(1, len(sheet.rows[0].values) + 1):
					worksheet.column_dimensions[get_column_letter(column)].width = self.COLUMN_WIDTH

		workbook.remove(workbook.active)
		workbook.save(self.filePath)

FilePrinter.register(ExcelPrinter)
