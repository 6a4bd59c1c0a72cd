from interfaces import FilePrinter
import printers.csv
import printers.excel

from pathlib import Path
from containers import StatisticsBook
from errors import ConfigError
from typing import Optional

def get_printer(path: Path, book: StatisticsBook) -> Optional[FilePrinter]:
	return FilePrinter.getPrinter(path, book=book)

def print_book(path: Path, book: StatisticsBook):
	printer = get_printer(path, book=book)
	if printer is None:
		raise ConfigError(f"no printer for '{Path(path).suffix}' files")
	printer.printStatistics()
