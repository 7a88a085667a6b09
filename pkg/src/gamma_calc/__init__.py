"""
gamma-calc - differential calculus on finite metric measure spaces
Main package
"""

__version__ = "0.1.0"
