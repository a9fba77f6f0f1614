"""Soft-logic matching of question mentions to scene objects, spatial masks and a toy distillation stack."""

__version__ = "0.1.0"
