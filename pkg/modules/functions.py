"""
Library of test functions with certified decay envelopes.

A function in the class G(r) satisfies |f(x)| <= C (1 + |x|)^{-beta} with
beta > r. Every library function carries its (C, beta) certificate and an
envelope usable by the truncation and wrap-around checks.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Union

import numpy as np
from scipy import special

from .envelopes import CompactEnvelope, Envelope, GaussianEnvelope, PowerEnvelope, sphere_area
from .errors import ConfigError

# not a pytest test despite the name
__test__ = False

LIBRARY = ('gaussian', 'power_bump', 'sine_window', 'indicator_smooth', 'zero', 'constant')


@dataclass(frozen=True, eq=False)
class DecayFunction:
    """
    f: R^d -> R evaluated row-wise on an (N, d) array.

    Attributes:
        C, beta: the class certificate |f(x)| <= C (1 + |x|)^{-beta}
            (beta = inf for compact support, 0 for non-decaying functions)
        envelope: radial envelope of |f|, or None
        support: radius beyond which f vanishes, or None
        gaussian_cov: sigma^2 when f(x) = exp(-|x|^2 / (2 sigma^2))
    """
    name: str
    func: Callable[[np.ndarray], np.ndarray]
    C: float
    beta: float
    envelope: Optional[Envelope]
    support: Optional[float] = None
    gaussian_cov: Optional[float] = None
    params: Dict[str, float] = field(default_factory=dict)
    radial_integral: Optional[Callable[[int], float]] = None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return np.asarray(self.func(x), dtype=float).reshape(-1)

    def in_class(self, r: float) -> bool:
        """f in G(r), i.e. beta > r"""
        return self.beta > r

    def integral(self, d: int) -> float:
        """Lebesgue integral over R^d"""
        if self.radial_integral is None:
            raise ValueError(f"{self.name} has no finite integral")
        return self.radial_integral(d)

    def certify(self, d: int, radius: float = 50.0, points: int = 4001) -> bool:
        """Numerical domination |f| <= C (1+|x|)^{-beta} on a radius grid along each axis"""
        r = np.linspace(0.0, radius, points)
        bound = self.C * (1.0 + r) ** (-self.beta) if math.isfinite(self.beta) else np.full(r.shape, self.C)
        if self.support is not None:
            bound = np.where(r <= self.support, self.C, 0.0)
        for axis in range(d):
            x = np.zeros((points, d))
            x[:, axis] = r
            if np.any(np.abs(self(x)) > bound * (1.0 + 1e-12) + 1e-300):
                return False
        return True

    def to_dict(self) -> Dict[str, Any]:
        return {'name': self.name, **self.params}


def gaussian(sigma: float = 1.0, beta: Optional[float] = None) -> DecayFunction:
    """
    exp(-|x|^2 / (2 sigma^2)). It lies in every class; the constant for a given
    beta is the maximum of (1+r)^beta exp(-r^2/(2 sigma^2)), reached where
    r (1 + r) = beta sigma^2.
    """
    if sigma <= 0:
        raise ValueError("gaussian needs sigma > 0")
    beta = 16.0 if beta is None else float(beta)
    r_star = (-1.0 + math.sqrt(1.0 + 4.0 * beta * sigma * sigma)) / 2.0
    C = (1.0 + r_star) ** beta * math.exp(-r_star * r_star / (2.0 * sigma * sigma))
    var = sigma * sigma

    def func(x):
        return np.exp(-np.sum(x * x, axis=1) / (2.0 * var))

    return DecayFunction('gaussian', func, C, beta, GaussianEnvelope(1.0, 1.0 / (2.0 * var)),
                         gaussian_cov=var, params={'sigma': sigma},
                         radial_integral=lambda d: (2.0 * math.pi * var) ** (d / 2.0))


def power_bump(C: float = 1.0, beta: float = 8.0) -> DecayFunction:
    """C (1 + |x|)^{-beta}, certificate (C, beta) exact"""
    if beta <= 0:
        raise ValueError("power_bump needs beta > 0")

    def func(x):
        return C * (1.0 + np.sqrt(np.sum(x * x, axis=1))) ** (-beta)

    def radial(d: int) -> float:
        # int_0^inf r^{d-1} (1+r)^{-beta} dr = B(d, beta - d)
        if beta <= d:
            return math.inf
        return C * sphere_area(d) * special.beta(d, beta - d)

    return DecayFunction('power_bump', func, C, beta, PowerEnvelope(C, beta),
                         params={'C': C, 'beta': beta}, radial_integral=radial)


def sine_window(width: float = 0.25) -> DecayFunction:
    """Product of cos^2(pi x_i / (2 width)) on the cube |x_i| <= width; compactly supported"""
    if width <= 0:
        raise ValueError("sine_window needs width > 0")

    def func(x):
        inside = np.all(np.abs(x) <= width, axis=1)
        values = np.prod(np.cos(np.pi * x / (2.0 * width)) ** 2, axis=1)
        return np.where(inside, values, 0.0)

    def support(d: int) -> float:
        return width * math.sqrt(d)

    # the Euclidean support radius depends on d; use the d = 3 value as a cover for d <= 3
    return DecayFunction('sine_window', func, 1.0, math.inf, CompactEnvelope(1.0, width * math.sqrt(3.0)),
                         support=width * math.sqrt(3.0), params={'width': width},
                         radial_integral=lambda d: width ** d)


def _smooth_step(t: np.ndarray) -> np.ndarray:
    """C-infinity step: 1 for t <= 0, 0 for t >= 1"""
    t = np.clip(t, 0.0, 1.0)
    with np.errstate(divide='ignore', over='ignore'):
        a = np.where(t < 1.0, np.exp(-1.0 / np.maximum(1.0 - t, 1e-300)), 0.0)
        b = np.where(t > 0.0, np.exp(-1.0 / np.maximum(t, 1e-300)), 0.0)
    return a / (a + b)


def indicator_smooth(radius: float = 0.25, width: float = 0.1) -> DecayFunction:
    """Smoothed indicator of the ball of the given radius, falling to 0 over `width`"""
    if radius < 0 or width <= 0:
        raise ValueError("indicator_smooth needs radius >= 0 and width > 0")

    def func(x):
        r = np.sqrt(np.sum(x * x, axis=1))
        return _smooth_step((r - radius) / width)

    def radial(d: int) -> float:
        nodes, weights = np.polynomial.legendre.leggauss(64)
        r = radius + width * (nodes + 1.0) / 2.0
        shell = math.fsum((weights * r ** (d - 1) * _smooth_step((r - radius) / width)).tolist()) * width / 2.0
        return sphere_area(d) * (radius ** d / d + shell)

    outer = radius + width
    return DecayFunction('indicator_smooth', func, 1.0, math.inf, CompactEnvelope(1.0, outer),
                         support=outer, params={'radius': radius, 'width': width}, radial_integral=radial)


def zero() -> DecayFunction:
    return DecayFunction('zero', lambda x: np.zeros(x.shape[0]), 0.0, math.inf,
                         CompactEnvelope(0.0, 0.0), support=0.0, radial_integral=lambda d: 0.0)


def constant(value: float = 1.0) -> DecayFunction:
    """Not decaying (class G(r) for no r); for conservation checks"""
    return DecayFunction('constant', lambda x: np.full(x.shape[0], float(value)), abs(value), 0.0,
                         None, params={'value': value})


_BUILDERS = {
    'gaussian': gaussian,
    'power_bump': power_bump,
    'sine_window': sine_window,
    'indicator_smooth': indicator_smooth,
    'zero': zero,
    'constant': constant,
}


def test_function(spec: Union[str, Dict[str, Any]]) -> DecayFunction:
    """
    Build a library function from "name" / "name:a,b" or {"name": ..., params}.

    Raises:
        ConfigError: unknown name or unusable parameters
    """
    if isinstance(spec, str):
        name, _, args = spec.partition(':')
        params = [float(a) for a in args.split(',') if a.strip()] if args else []
        builder = _BUILDERS.get(name.strip())
        if builder is None:
            raise ConfigError('test_function', f"Unknown test function '{name}', expected one of {LIBRARY}")
        try:
            return builder(*params)
        except (TypeError, ValueError) as e:
            raise ConfigError('test_function', f"Bad parameters for '{name}': {e}") from e
    params = dict(spec)
    name = params.pop('name', None)
    builder = _BUILDERS.get(name)
    if builder is None:
        raise ConfigError('test_function', f"Unknown test function '{name}', expected one of {LIBRARY}")
    try:
        return builder(**params)
    except (TypeError, ValueError) as e:
        raise ConfigError('test_function', f"Bad parameters for '{name}': {e}") from e
