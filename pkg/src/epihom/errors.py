"""Exception hierarchy. Every error carries a short machine-readable ``code``."""


class EpihomError(Exception):
    code = "error"

    def __init__(self, detail=""):
        self.detail = detail
        msg = self.code if not detail else f"{self.code}: {detail}"
        super().__init__(msg)


class GeometryError(EpihomError, ValueError):
    def __init__(self, code, detail=""):
        self.code = code
        super().__init__(detail)


class SolverError(EpihomError, RuntimeError):
    def __init__(self, code, detail=""):
        self.code = code
        super().__init__(detail)


class ModelError(EpihomError, ValueError):
    def __init__(self, code, detail=""):
        self.code = code
        super().__init__(detail)


class ConfigError(EpihomError, ValueError):
    def __init__(self, code, detail=""):
        self.code = code
        super().__init__(detail)


class BlowUpDetected(EpihomError, RuntimeError):
    code = "blow-up-detected"


class CutoffActiveWarning(UserWarning):
    """Transmembrane voltage exceeded the cutoff level M; the clamped law is in use."""
