from idc.lang.ast import ProgramAst
from idc.lang.parser import ParseError, parse
from idc.lang.unparse import unparse

__all__ = ["ParseError", "ProgramAst", "parse", "unparse"]
