"""One-shot trajectory learning for open-quantum-system exciton dynamics."""

__version__ = "0.1.0"
