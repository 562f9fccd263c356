"""Sobolev constants S_N from radial quadrature of U(r) = (1 + r^2)^(-(N-2)/2).

S_N = (int |grad U|^2) / (int U^p)^(2/p), p = 2N/(N-2). Both integrals are
radial, w_{N-1} int_0^inf r^(N-1) f(r) dr; the sphere area cancels only
partially, so it is kept. Run: python3 sobolev_constant.py > sobolev_s3.json
"""
import json

import mpmath as mp

mp.mp.dps = 40


def sphere_area(n):
    return 2 * mp.pi ** (mp.mpf(n) / 2) / mp.gamma(mp.mpf(n) / 2)


def constant(n):
    n = mp.mpf(n)
    p = 2 * n / (n - 2)
    u = lambda r: (1 + r * r) ** (-(n - 2) / 2)
    du = lambda r: -(n - 2) * r * (1 + r * r) ** (-n / 2)
    area = sphere_area(n)
    grad = area * mp.quad(lambda r: r ** (n - 1) * du(r) ** 2, [0, 1, mp.inf])
    power = area * mp.quad(lambda r: r ** (n - 1) * u(r) ** p, [0, 1, mp.inf])
    return grad / power ** (2 / p)


out = {
    "method": "radial quadrature (mpmath, 40 digits) of the extremal profile",
    "S3": float(constant(3)),
    "S4": float(constant(4)),
}
print(json.dumps(out, indent=2))
