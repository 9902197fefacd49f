"""
Checking gradients against finite differences
=============================================

Every backward rule is hand-written, so a central-difference check over a
tiny model is the cheapest way to trust them.
"""

from nasgnn import EncoderConfig, SurrogateModel
from nasgnn import autodiff as ad
from nasgnn.data import gen_synthetic

model = SurrogateModel.create(EncoderConfig(d_n=4, d_g=3, rounds=2), seed=0)
batch = list(gen_synthetic(4, seed=0, size_distribution=range(4, 8)))

report = ad.finite_diff_check(lambda: model.loss(batch), model.params)
print(f"worst relative error {report.worst:.2e}, passed: {report.passed}")

###############################################################################
# A deliberately broken backward rule is caught

with ad.corrupt_backward("tanh"):
    broken = ad.finite_diff_check(lambda: model.loss(batch), model.params)
print(sorted(broken.failures)[:5])
