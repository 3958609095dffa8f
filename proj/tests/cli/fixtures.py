"""Fixture writers for the command-line tests."""

import math
import random
import struct


def write_model(path, *, species, head_weight, head_bias, input_dim=4, hidden_dim=8,
                layers=0, identity=True, dropout=0.5, seed=0, encoder_params=None):
    """Writes a model file. head_weight is S x input/hidden (row lists)."""
    s = len(species)
    out = bytearray(b"SINR")
    out += struct.pack("<IIIII", 1, input_dim, hidden_dim, layers, s)
    out += struct.pack("<dQBBH", dropout, seed, 1 if identity else 0, 0, 0)
    for v in encoder_params or []:
        out += struct.pack("<f", v)
    # Column-major head weight, then the bias.
    width = len(head_weight[0])
    for c in range(width):
        for r in range(s):
            out += struct.pack("<f", head_weight[r][c])
    for b in head_bias:
        out += struct.pack("<f", b)
    out += struct.pack("<I", s)
    for sp in species:
        raw = sp.encode()
        out += struct.pack("<I", len(raw)) + raw
    with open(path, "wb") as f:
        f.write(out)


def write_zero_mlp(path, species=("a", "b"), hidden=8, layers=1):
    n_encoder = hidden * 4 + hidden + layers * 2 * (hidden * hidden + hidden)
    write_model(path, species=list(species), head_weight=[[0.0] * hidden for _ in species],
                head_bias=[0.0] * len(species), hidden_dim=hidden, layers=layers,
                identity=False, encoder_params=[0.0] * n_encoder)


def write_north_model(path):
    """Logistic regression on sin(pi lat / 90): species n scores above 0.5 north of the equator."""
    write_model(path, species=["n"], head_weight=[[0.0, 0.0, 10.0, 0.0]], head_bias=[0.0])


DISKS = {"a": (-100.0, 40.0, 25.0), "b": (20.0, 0.0, 25.0), "c": (120.0, -30.0, 25.0)}


def disk_points(n, seed):
    rng = random.Random(seed)
    pts = []
    for i in range(n):
        k = "abc"[i % 3]
        lon0, lat0, r = DISKS[k]
        rr = r * math.sqrt(rng.random())
        t = rng.random() * 2.0 * math.pi
        pts.append((k, lon0 + rr * math.cos(t), lat0 + rr * math.sin(t)))
    return pts


def write_obs(path, rows):
    with open(path, "w") as f:
        f.write("species_id,lon,lat\n")
        for k, lon, lat in rows:
            f.write(f"{k},{lon:.6f},{lat:.6f}\n")


def write_disk_eval_grid(path, resolution):
    n_lon = 2 * resolution
    d = 180.0 / resolution
    with open(path, "w") as f:
        f.write(f"EVALGRID {resolution} {len(DISKS)}\n")
        for k, (lon0, lat0, r) in DISKS.items():
            for row in range(resolution):
                for col in range(n_lon):
                    lon = -180.0 + (col + 0.5) * d
                    lat = -90.0 + (row + 0.5) * d
                    f.write(f"{k} {row * n_lon + col} {int(math.hypot(lon - lon0, lat - lat0) < r)}\n")
