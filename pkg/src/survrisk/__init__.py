"""Survival-analysis risk prediction on EHR encounters."""

__version__ = "0.1.0"
