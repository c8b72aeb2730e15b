"""Exception types raised across the package."""


class BergmanError(Exception):
    """Base class for all errors raised by bergman_lab."""


class NonPositiveForm(BergmanError, ValueError):
    pass


class BadModulus(BergmanError, ValueError):
    pass


class OutOfChart(BergmanError, ValueError):
    """The point is not covered by the requested affine chart."""


class WrongModel(BergmanError, ValueError):
    pass


class TruncationTooSmall(BergmanError, ValueError):
    pass


class IncompatiblePower(BergmanError, ValueError):
    """L^p (x) E does not descend with the trivial linearization at z = 0."""


class OrderTooSmall(BergmanError, ValueError):
    pass


class IndefiniteGram(BergmanError, ArithmeticError):
    pass


class GridTooCoarse(BergmanError, ValueError):
    pass


class QuadratureDiverged(BergmanError, ArithmeticError):
    pass


class IllConditioned(BergmanError, ArithmeticError):
    pass


class BelowFloor(BergmanError, ValueError):
    """Every far-zone sample sits below the numerical noise floor."""


class InsufficientSamples(BergmanError, ValueError):
    pass
