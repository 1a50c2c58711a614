"""Desk-scale visual RWKV: linear-RNN time mixing with data-dependent
recurrence, 2D image scanning, multimodal prompting, and a constant-state
inference benchmark harness."""

__version__ = "0.1.0"
