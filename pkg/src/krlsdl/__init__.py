"""krlsdl — online kernel dictionary learning by recursive least squares."""

__version__ = "0.1.0"
