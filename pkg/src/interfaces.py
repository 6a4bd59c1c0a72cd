import abc
from containers import StatisticsBook
from pathlib import Path
from typing import Optional, Any, Type

class DataParser:
	__parsers__: list[Type["DataParser"]] = []

	EXTENSIONS: set[str] = set()

	path: Path

	def __init__(self, args: list[Any]):
		self.path = Path(args[0])

	@staticmethod
	def register(parser: Type["DataParser"]):
		DataParser.__parsers__.append(parser)

	@staticmethod
	def getParser(args: list[Any]) -> Optional["DataParser"]:
		for parserClass in DataParser.__parsers__:
			if parserClass.canParse(args):
				return parserClass(args)
		return None

	@abc.abstractmethod
	def readData(self) -> Any:
		pass

	@classmethod
	def canParse(cls, args: list[Any]) -> bool:
		path = Path(args[0])
		return path.is_file() and path.suffix.casefold() in {e.casefold() for e in cls.EXTENSIONS}

class PoseStatistics:
	"""
	Analysis stage producing tables. `truth` maps sensor ids to the
	reference poses errors are measured against.
	"""
	truth: dict[str, Any]

	def __init__(self, truth: dict[str, Any]):
		self.truth = truth

	@abc.abstractmethod
	def analyze(self) -> StatisticsBook:
		pass



class StatisticsPrinter:
	statBook: StatisticsBook

	def __init__(self, statBook: StatisticsBook) -> None:
		self.statBook = statBook

	@abc.abstractmethod
	def printStatistics(self):
		pass

class FilePrinter(StatisticsPrinter):
	__printers__: list[Type["FilePrinter"]] = []

	EXTENSIONS: set[str] = set()

	filePath: Path

	def __init__(self, statBook: StatisticsBook, path: Path):
		super().__init__(statBook)
		self.filePath = Path(path)

	@staticmethod
	def register(printer: Type["FilePrinter"]):
		FilePrinter.__printers__.append(printer)

	@staticmethod
	def getPrinter(path: Any, book: StatisticsBook) -> Optional["FilePrinter"]:
		for printerClass in FilePrinter.__printers__:
			if printerClass.canPrint(path=Path(path), book=book):
				return printerClass(book, path=Path(path))
		return None

	@classmethod
	def canPrint(cls, path: Path, book: StatisticsBook) -> bool:
		return path.suffix.casefold() in {e.casefold() for e in cls.EXTENSIONS}

class ConsolePrinter(StatisticsPrinter):
	""" Summary of a book on stdout, one line per row """

	def printStatistics(self):
		for sheet in self.statBook.sheets:
			print(f"[{sheet.name}]")
			for row in sheet.rows:
				print("  " + ", ".join(row.values))
