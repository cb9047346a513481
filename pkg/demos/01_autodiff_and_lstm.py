#!/usr/bin/env python3
"""
Tour of the tape autodiff and the recurrent layers it powers.

Run from the repository root after ``pip install -e .``.
"""

import numpy as np

from glocalnet import autodiff as ad
from glocalnet.autodiff import Tape, grad_check
from glocalnet.recurrent import Seq2SeqParams, seq2seq_forward

# a scalar function of two matrices, differentiated by the tape
rng = np.random.default_rng(0)
W, x = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))

tape = Tape()
w_node, x_node = tape.input(W), tape.constant(x)
loss = ad.sq_norm(ad.tanh(ad.matmul(w_node, x_node)))
grads = tape.backward(loss)
print("loss", loss.value)
print("dL/dW\n", grads[w_node])

# central differences agree with the tape
err = grad_check(lambda n: ad.sq_norm(ad.tanh(ad.matmul(n[0], x))), [W])
print("grad_check relative error", err)

# a bidirectional seq2seq over a 5-step sequence of 6-d inputs
params = Seq2SeqParams.init(6, 6, hidden=8, seed=1)
seq = [rng.normal(size=(6, 1)) for _ in range(5)]
out = seq2seq_forward(seq, params)
print("seq2seq emits", len(out), "steps of shape", out[0].shape)
