# Independent oracles: exhaustive hypergeometric enumeration (exact rationals) + scipy.
import json, random
from fractions import Fraction
from math import comb
import numpy as np
from scipy import stats

def fisher_enum(t):
    (a,b),(c,d) = t
    r1, r2, c1 = a+b, c+d, a+c
    n = r1+r2
    tot = comb(n, c1)
    probs = {}
    for x in range(max(0, c1-r2), min(r1, c1)+1):
        probs[x] = Fraction(comb(r1,x)*comb(r2,c1-x), tot)
    obs = probs[a]
    return float(sum(p for p in probs.values() if p <= obs))

out = {"fisher": {"table": [[1,9],[11,3]], "p_enum": fisher_enum([[1,9],[11,3]]),
                  "p_scipy": float(stats.fisher_exact([[1,9],[11,3]])[1])}}
rng = random.Random(20240501)
chi = []
while len(chi) < 50:
    t = [[rng.randint(0,40) for _ in range(2)] for _ in range(2)]
    rs = [sum(r) for r in t]; cs = [t[0][0]+t[1][0], t[0][1]+t[1][1]]
    if 0 in rs or 0 in cs: continue
    res = stats.chi2_contingency(np.array(t), correction=False)
    chi.append({"table": t, "statistic": float(res[0]), "p_value": float(res[1]),
                "fisher_p": fisher_enum(t)})
out["chi_squared"] = chi
pt = []
while len(pt) < 50:
    n = rng.randint(2, 30)
    a = [round(rng.gauss(0,1),6) for _ in range(n)]
    b = [round(x + rng.gauss(0.2,1),6) for x in a]
    r = stats.ttest_rel(a, b)
    pt.append({"a": a, "b": b, "statistic": float(r.statistic), "p_value": float(r.pvalue)})
out["paired_t"] = pt
json.dump(out, open("crates/core/tests/fixtures/oracles/stats_oracle.json","w"), indent=1)
print(out["fisher"])
