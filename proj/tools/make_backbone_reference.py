#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Writes a small GPT-2 style weight archive plus a golden activation.

A plain numpy forward pass (pre-norm blocks, causal attention, tanh GELU,
final layer norm) produces the reference output, independently of the C++
code. Output files:

    backbone_archive.scantc   named tensors backbone.h.{i}.*, ln_f, wpe
    backbone_input.scacsi     [B, L, E] input
    backbone_output.scacsi    [B, L, E] reference activation
"""

import argparse
import struct
from pathlib import Path

import numpy as np

TENSOR_MAGIC = b"SCACSI\0"
CONTAINER_MAGIC = b"SCANTC\0"


def tensor_record(a):
    a = np.asarray(a, dtype=np.float32)
    out = bytearray(TENSOR_MAGIC)
    out += struct.pack("<II", 1, a.ndim)
    out += struct.pack("<%dQ" % a.ndim, *a.shape)
    pairs = np.zeros(a.size * 2, dtype="<f4")
    pairs[0::2] = a.ravel()
    out += pairs.tobytes()
    return bytes(out)


def write_container(path, named):
    blob = bytearray(CONTAINER_MAGIC)
    blob += struct.pack("<IQ", 1, len(named))
    for name, a in named:
        raw = name.encode()
        blob += struct.pack("<I", len(raw)) + raw
        blob += tensor_record(a)
    Path(path).write_bytes(bytes(blob))


def layer_norm(x, w, b, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * w + b


def gelu(x):
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x**3)))


def linear(x, w, b):
    return x @ w.T + b


def block(x, p, prefix, heads):
    bsz, length, width = x.shape
    d = width // heads
    h = layer_norm(x, p[prefix + ".ln_1.weight"], p[prefix + ".ln_1.bias"])
    qkv = linear(h, p[prefix + ".attn.c_attn.weight"], p[prefix + ".attn.c_attn.bias"])
    q, k, v = np.split(qkv, 3, axis=-1)

    def heads_first(t):
        return t.reshape(bsz, length, heads, d).transpose(0, 2, 1, 3)

    q, k, v = heads_first(q), heads_first(k), heads_first(v)
    scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(d)
    mask = np.triu(np.ones((length, length), dtype=bool), 1)
    scores = np.where(mask, -np.inf, scores)
    scores = scores - scores.max(-1, keepdims=True)
    probs = np.exp(scores)
    probs /= probs.sum(-1, keepdims=True)
    att = (probs @ v).transpose(0, 2, 1, 3).reshape(bsz, length, width)
    x = x + linear(att, p[prefix + ".attn.c_proj.weight"], p[prefix + ".attn.c_proj.bias"])
    h = layer_norm(x, p[prefix + ".ln_2.weight"], p[prefix + ".ln_2.bias"])
    h = gelu(linear(h, p[prefix + ".mlp.c_fc.weight"], p[prefix + ".mlp.c_fc.bias"]))
    return x + linear(h, p[prefix + ".mlp.c_proj.weight"], p[prefix + ".mlp.c_proj.bias"])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="tests/data")
    ap.add_argument("--width", type=int, default=64)
    ap.add_argument("--layers", type=int, default=2)
    ap.add_argument("--heads", type=int, default=4)
    ap.add_argument("--positions", type=int, default=12)
    ap.add_argument("--batch", type=int, default=2)
    ap.add_argument("--seed", type=int, default=20240611)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    e = args.width
    f32 = lambda a: np.asarray(a, dtype=np.float32)
    params = {}
    for i in range(args.layers):
        pre = "backbone.h.%d" % i
        params[pre + ".ln_1.weight"] = f32(1.0 + 0.1 * rng.standard_normal(e))
        params[pre + ".ln_1.bias"] = f32(0.1 * rng.standard_normal(e))
        params[pre + ".attn.c_attn.weight"] = f32(0.15 * rng.standard_normal((3 * e, e)))
        params[pre + ".attn.c_attn.bias"] = f32(0.05 * rng.standard_normal(3 * e))
        params[pre + ".attn.c_proj.weight"] = f32(0.15 * rng.standard_normal((e, e)))
        params[pre + ".attn.c_proj.bias"] = f32(0.05 * rng.standard_normal(e))
        params[pre + ".ln_2.weight"] = f32(1.0 + 0.1 * rng.standard_normal(e))
        params[pre + ".ln_2.bias"] = f32(0.1 * rng.standard_normal(e))
        params[pre + ".mlp.c_fc.weight"] = f32(0.15 * rng.standard_normal((4 * e, e)))
        params[pre + ".mlp.c_fc.bias"] = f32(0.05 * rng.standard_normal(4 * e))
        params[pre + ".mlp.c_proj.weight"] = f32(0.1 * rng.standard_normal((e, 4 * e)))
        params[pre + ".mlp.c_proj.bias"] = f32(0.05 * rng.standard_normal(e))
    params["backbone.ln_f.weight"] = f32(1.0 + 0.1 * rng.standard_normal(e))
    params["backbone.ln_f.bias"] = f32(0.1 * rng.standard_normal(e))
    params["backbone.wpe"] = f32(0.1 * rng.standard_normal((args.positions, e)))

    x = f32(rng.standard_normal((args.batch, args.positions, e)))
    p64 = {k: v.astype(np.float64) for k, v in params.items()}
    h = x.astype(np.float64)
    for i in range(args.layers):
        h = block(h, p64, "backbone.h.%d" % i, args.heads)
    y = layer_norm(h, p64["backbone.ln_f.weight"], p64["backbone.ln_f.bias"])

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_container(out / "backbone_archive.scantc", sorted(params.items()))
    (out / "backbone_input.scacsi").write_bytes(tensor_record(x))
    (out / "backbone_output.scacsi").write_bytes(tensor_record(y))
    print("wrote", out / "backbone_archive.scantc", "and reference activation", y.shape)


if __name__ == "__main__":
    main()
