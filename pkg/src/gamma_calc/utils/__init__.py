"""
Utilities Package
Linear algebra helpers, formatters, validators
"""
