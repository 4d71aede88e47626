"""Joint UD + UDS parsing: graph conversion, a transductive seq-to-graph model, decoding, metrics."""

__version__ = "0.1.0"
