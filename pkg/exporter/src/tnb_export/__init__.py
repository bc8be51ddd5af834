from .exporter import ExportSpec, export_benchmark
from .mapping import ExportError, cell_encoding, parse_arch_string

__all__ = ["ExportSpec", "export_benchmark", "ExportError", "cell_encoding",
           "parse_arch_string"]
