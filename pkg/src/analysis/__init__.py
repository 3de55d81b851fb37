"""
Diagnostics: suivi de similarité et exports.
"""
