"""Grid-world object navigation with modelled perception modules and a latency/VRAM cost model."""

__version__ = "0.1.0"
