"""Extended-precision reference values frozen into the C++ unit tests.

Run with: python3 tests/oracles/scalar_oracles.py
"""
import math
import random

from mpmath import mp, mpf, log, exp, sqrt, acos, pi

mp.dps = 50


def logistic(z):
    return log(1 + exp(-mpf(z)))


def neg_deriv(z):
    return 1 / (1 + exp(mpf(z)))


print("logistic(40)        =", mp.nstr(logistic(40), 20))
print("logistic(-745)      =", mp.nstr(logistic(-745), 20))
print("neg_deriv(-3)       =", mp.nstr(neg_deriv(-3), 20))

# one dropout step: m=1, d=1, a=+1, w=1, x=1, y=-1, b=1, eta=0.1
g = mpf(1)
y = -1
grad = -neg_deriv(y * g) * y * 1  # l'(yg) * y * dg/dw
print("step w_next         =", mp.nstr(1 - mpf("0.1") * grad, 20))
print("step loss           =", mp.nstr(logistic(y * g), 20))


def bounds(gamma, eta, T, m, d, delta):
    gamma, eta, T, m, d, delta = map(mpf, (gamma, eta, T, m, d, delta))
    c = sqrt(d) + max(1 / (14 * gamma**2), 2 * sqrt(log(m))) + 1
    arg1 = max(2 * eta * T, mpf(1))
    arg2 = max(24 * eta * c * sqrt(m) * T**2, exp(1))
    lam = 5 / gamma * log(arg1) + sqrt(44 / gamma**2 * log(arg2))
    return dict(
        c=c,
        lam=lam,
        m_required=2401 * gamma**-6 * lam**2,
        thm1=4 * lam**2 / (eta * T),
        thm2=12 * lam**2 / (eta * T) + 6 * log(1 / delta) / T,
        worst=c * sqrt(m) / log(2) + 1,
    )


for k, v in bounds(0.25, log(2), 1000, 4096, 20, 0.05).items():
    print(f"bounds(0.25,ln2,1e3,4096,20,.05).{k:10s} =", mp.nstr(v, 20))
for k, v in bounds(0.125, 0.5, 2000, 4096, 20, 0.05).items():
    print(f"bounds(0.125,.5,2e3,4096,20,.05).{k:10s} =", mp.nstr(v, 20))

# halfspace acceptance on the circle: closed form and Monte Carlo
print("accept(d=2,g0=.5)   =", mp.nstr(2 * acos(mpf("0.5")) / pi, 20))
rng = random.Random(7)
n, hits = 200000, 0
for _ in range(n):
    a, b = rng.gauss(0, 1), rng.gauss(0, 1)
    if abs(a) / math.hypot(a, b) >= 0.5:
        hits += 1
print("accept MC           =", hits / n)

# forward_sub hand example: rows (1,0),(0,1), a=(+1,-1), x=(1,1)/sqrt2, mask (1,0)
x = [1 / math.sqrt(2)] * 2
print("forward_sub example =", (1 / math.sqrt(2)) * (1 * max(0.0, x[0])))
