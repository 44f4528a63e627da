"""KL(q(z|x) || p(z)) averaged over the data splits into I(z, x) + D(q(z) || p(z)).

A hand-made 2-D posterior family (no training of the VAE) so every number
can be checked by eye: the Monte-Carlo split, and a softmax classifier that
learns to tell the N posteriors apart and recovers the same split.
"""
import numpy as np

from vaeas.baselines import mc_estimate
from vaeas.classifier import AuxClassifier, classifier_loss_and_grads, report_from_samples
from vaeas.mathops import SeededRng
from vaeas.nn import Adam

N = 32
angle = 2 * np.pi * np.arange(N) / N
mu = np.stack([1.5 * np.cos(angle), 1.5 * np.sin(angle)], axis=1)
log_sigma = np.full((N, 2), np.log(0.35))

mc = mc_estimate(mu, log_sigma, None, SeededRng(0), draws=2000)
print(f"closed-form mean KL {mc.kl:.4f}")
print(f"Monte Carlo   I={mc.mi:.4f}  MD={mc.md:.4f}  sum={mc.mi + mc.md:.4f}")

clf = AuxClassifier.create(2, 64, 3, N, "flat", SeededRng(1))
opt = Adam(clf.params.arrays(), lr=3e-3)
cats = np.repeat(np.arange(N), 32)
for step in range(1500):
    z = mu[cats] + np.exp(log_sigma[cats]) * SeededRng(2).substream(step).normal((len(cats), 2))
    loss, grads, _ = classifier_loss_and_grads(clf, z, cats)
    opt.step(clf.params.arrays(), grads)
    clf.params.bump()
    if step % 300 == 0:
        print(f"  step {step:4d} cross-entropy {loss:.4f}")

cats = np.repeat(np.arange(N), 4000)
z = mu[cats] + np.exp(log_sigma[cats]) * SeededRng(3).normal((len(cats), 2))
rep = report_from_samples(clf, z, mu[cats], log_sigma[cats], cats)
print(f"classifier    I={rep.mi:.4f}  MD={rep.md:.4f}  sum={rep.mi + rep.md:.4f}")
print(f"Fano estimate I_fano={rep.mi_fano:.4f} (error rate {rep.pe:.3f}); I <= I_fano <= I + P_e ln N")
