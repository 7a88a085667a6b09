"""
Schemas Package
Run configuration and report schemas
"""
