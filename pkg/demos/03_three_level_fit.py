"""Fitting the three-level model: a conjugate check, then the first-version data."""

from livingmeta.effects import compute_effects
from livingmeta.inference import fit, summarize
from livingmeta.ledger import load_v1_fixture
from livingmeta.model import Fixed, MetaData, ModelSpec
from livingmeta.sampler import McmcConfig

cfg = McmcConfig(n_chains=4, warmup_iterations=500, sampling_iterations=1000, master_seed=1)

# with both heterogeneity SDs pinned at 0 the posterior of mu is normal:
# precision 1/0.25 + 1 = 5, mean 0.5 * 4 / 5 = 0.4, sd sqrt(0.2) = 0.447
single = MetaData([0.5], [[0.25]], ["one-study"])
s = summarize(fit(single, ModelSpec(prior_tau=Fixed(0.0), prior_omega=Fixed(0.0)), cfg))
print(f"conjugate: mean {s['mu'].mean:.3f}  sd {s['mu'].sd:.3f}   (exact 0.400, 0.447)")

# the shipped ledger: 27 effects nested in 15 studies
ledger = load_v1_fixture()
data = MetaData.from_effects(compute_effects(ledger.studies))
summary = summarize(fit(data, ModelSpec(), cfg))
for name in ("mu", "tau", "omega"):
    p = summary[name]
    print(f"{name:>5}: mean {p.mean:.3f}  95% CrI [{p.lo95:.3f}, {p.hi95:.3f}]  "
          f"R-hat {p.rhat:.3f}  bulk ESS {p.ess_bulk:.0f}")
print("converged:", summary.converged, summary.diagnostics.reasons)
