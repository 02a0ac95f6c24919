"""Independent reference values frozen into crates/core/tests/oracles.rs.

Run with `python3 tools/oracle.py`; uses only the standard library.
"""
import math

# --- noise schedule: linear betas scaled by 1000/N, capped at 0.999
def schedule(n):
    scale = max(1000.0 / n, 1.0)
    betas = [min(scale * (1e-4 + (0.02 - 1e-4) * (i / (n - 1) if n > 1 else 0.0)), 0.999) for i in range(n)]
    abar, acc = [], 1.0
    for b in betas:
        acc *= 1.0 - b
        abar.append(acc)
    return betas, abar

b, a = schedule(100)
print("N=100 beta_1", repr(b[0]), "beta_100", repr(b[-1]))
print("N=100 abar_1", repr(a[0]), "abar_50", repr(a[49]), "abar_100", repr(a[-1]))
b10, a10 = schedule(10)
print("N=10 abar_10", repr(a10[-1]))

# --- environments
def clip(x, lo, hi):
    return min(max(x, lo), hi)

def chain_rollout(policy):
    v, ret, cost = 0.0, 0.0, 0.0
    for _ in range(64):
        a = 0.2 if policy == "greedy" else clip(0.55 - v, -0.2, 0.2)
        v = clip(v + a, 0.0, 1.0)
        ret += v
        cost += 1.0 if v > 0.6 else 0.0
    return ret, cost

def dist(p, q):
    return math.sqrt(sum((x - y) * (x - y) for x, y in zip(p, q)))

def toward(s, t):
    d = [t[0] - s[0], t[1] - s[1]]
    m = max(abs(d[0]), abs(d[1]))
    k = 0.1 / m if m > 0.1 else 1.0
    return [d[0] * k, d[1] * k]

def point_rollout(policy):
    goal, way = [0.8, 0.8], [0.5, -0.5]
    s, phase, ret, cost = [-0.8, -0.8], 0, 0.0, 0.0
    for _ in range(64):
        if policy == "greedy":
            a = toward(s, goal)
        else:
            if phase == 0 and dist(s, way) < 0.05:
                phase = 1
            a = toward(s, way if phase == 0 else goal)
        a = [clip(x, -0.1, 0.1) for x in a]
        n = [clip(s[0] + a[0], -1.0, 1.0), clip(s[1] + a[1], -1.0, 1.0)]
        ret += dist(s, goal) - dist(n, goal)
        cost += 1.0 if dist(n, [0.0, 0.0]) < 0.35 else 0.0
        s = n
    return ret, cost

for p in ("safe", "greedy"):
    print("ChainVel1D", p, [repr(x) for x in chain_rollout(p)])
    print("PointHazard2D", p, [repr(x) for x in point_rollout(p)])

# --- relabeling bound and grid
print("r_us_bound(0,1,1,32)", (0.0 - 1.0) * 32, "default", repr(1.05 * -32.0))
hf = (1 - 0.99 ** 32) / (1 - 0.99)
print("r_us_bound(0,1,0.99,32)", repr((0.0 - 1.0) * hf))
print("limit_grid(31)[1], [31]", repr(31 * 1 / 31), repr(31 * 31 / 31))

# --- binomial tail and seeds
def tail(n, k):
    return sum(math.comb(n, i) for i in range(k, n + 1)) / 2 ** n
print("P(X>=60|100)", repr(tail(100, 60)))
print("P(X>=15|20)", repr(tail(20, 15)))

M = (1 << 64) - 1
def mix(a, b):
    z = a ^ ((b * 0x9E3779B97F4A7C15) & M)
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M
    return z ^ (z >> 31)
print("mix_seed(0,0)", mix(0, 0), "mix_seed(7,3)", mix(7, 3))
