"""
Training on synthetic cells
===========================

The synthetic oracle scores cells from their structure, which gives a
learnable target without the real benchmark. A small model trains in a
minute or two.
"""

from nasgnn import EncoderConfig, SurrogateModel
from nasgnn.data import gen_synthetic, label_std
from nasgnn.training import RandomSplit, evaluate, split, train, train_baseline_mlp

data = gen_synthetic(1000, seed=7)
tr, te, va = split(data, RandomSplit(seed=7))
print(len(tr), len(te), len(va), "label std", round(label_std(te), 4))

model = SurrogateModel.create(EncoderConfig(d_n=16, d_g=8, rounds=2), seed=7)
log = train(model, tr, va, epochs=40, batch_size=32, lr=1e-3, seed=7,
            on_epoch=lambda e, a, b: print(e, round(a, 4), round(b, 4)) if e % 10 == 0 else None)

report = evaluate(model, te)
print("GNN test rmse", round(report.rmse, 5))
for b in report.bins:
    if b.count:
        print(f"  [{b.lo:.2f}, {b.hi:.2f})  n={b.count:4d}  mse={b.mse_mean:.2e}")

_, _, base = train_baseline_mlp("one_hot", tr, va, te, epochs=40, batch_size=32, lr=1e-3, seed=7)
print("one-hot MLP test rmse", round(base.rmse, 5))
