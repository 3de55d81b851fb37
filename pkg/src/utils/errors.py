"""
Exceptions communes à toute la bibliothèque.
"""


class AbsWinError(Exception):
    """Classe de base des erreurs du projet."""


class InvalidArgumentError(AbsWinError, ValueError):
    """Argument invalide (dimensions incohérentes, indices hors limites, etc.)."""


class StateError(AbsWinError, RuntimeError):
    """Opération appelée dans un état incorrect (backward sans forward, gradients périmés)."""


class FormatError(AbsWinError, ValueError):
    """Artefact binaire ou CSV mal formé (magic, version, troncature)."""


class ConfigError(AbsWinError, ValueError):
    """Configuration d'expérience invalide ou incompatible avec un checkpoint (erreur d'usage)."""
