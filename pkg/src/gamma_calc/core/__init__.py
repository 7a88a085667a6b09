"""
Core engine components
Configuration, logging, errors, the finite space and its builders
"""
