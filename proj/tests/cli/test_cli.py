import hashlib
import os
import subprocess
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))
import fixtures  # noqa: E402

SINR = os.environ.get("SINR_BIN", "sinr")


def run(*args, env=None, check=None):
    proc = subprocess.run([SINR, *map(str, args)], capture_output=True, text=True,
                          env={**os.environ, **(env or {})})
    if check is not None:
        assert proc.returncode == check, proc.stderr
    return proc


def sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def read_csv(path):
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    return header, [line.split(",") for line in lines[1:]]


@pytest.fixture
def disk_obs(tmp_path):
    path = tmp_path / "obs.csv"
    fixtures.write_obs(path, fixtures.disk_points(900, seed=1))
    return path


SMALL = ["--epochs", 2, "--batch-size", 64, "--hidden-dim", 16, "--layers", 1]


def test_help_and_usage_errors(tmp_path, disk_obs):
    assert run("--help").returncode == 0
    assert run("train", "--out", tmp_path / "m.sinr").returncode == 2
    assert run().returncode == 2
    assert run("train", "--obs", disk_obs, "--out", "x", "--loss", "bogus").returncode == 2
    proc = run("train", "--obs", disk_obs, "--out", tmp_path / "m.sinr", "--input", "env")
    assert proc.returncode == 2
    assert "env-raster" in proc.stderr


def test_train_is_deterministic_in_seed(tmp_path, disk_obs):
    a, b, c = (tmp_path / n for n in ("a.sinr", "b.sinr", "c.sinr"))
    run("train", "--obs", disk_obs, "--out", a, "--seed", 7, *SMALL, check=0)
    run("train", "--obs", disk_obs, "--out", b, "--seed", 7, *SMALL, check=0)
    run("train", "--obs", disk_obs, "--out", c, "--seed", 8, *SMALL, check=0)
    assert sha256(a) == sha256(b)
    assert sha256(a) != sha256(c)


def test_manifest_replays_the_run(tmp_path, disk_obs):
    model = tmp_path / "m.sinr"
    out = run("train", "--obs", disk_obs, "--out", model, "--seed", 3, *SMALL, check=0).stdout
    assert sum(l.startswith("epoch ") for l in out.splitlines()) == 2
    manifest = Path(str(model) + ".manifest").read_text()
    assert f'model_sha256="{sha256(model)}"' in manifest
    assert f'obs_sha256="{sha256(disk_obs)}"' in manifest
    assert "lambda=2048\n" in manifest and "seed=3\n" in manifest

    replay = tmp_path / "replay.sinr"
    proc = run("train", "--from-manifest", Path(str(model) + ".manifest"), "--out", replay, check=0)
    assert "replay matches" in proc.stdout
    assert sha256(replay) == sha256(model)

    # A changed input is refused.
    with open(disk_obs, "a") as f:
        f.write("a,1,1\n")
    proc = run("train", "--from-manifest", Path(str(model) + ".manifest"), "--out", replay)
    assert proc.returncode == 1
    assert "digest" in proc.stderr


def test_defaults_follow_the_paper(tmp_path, disk_obs):
    help_text = run("train", "--help", check=0).stdout
    for flag, value in [("--epochs", "10"), ("--batch-size", "2048"), ("--lr", "0.0005"),
                        ("--lambda", "2048")]:
        line = next(l for l in help_text.splitlines() if l.strip().startswith(flag))
        assert f"[{value}]" in line, line


def test_rejected_rows_are_reported(tmp_path):
    obs = tmp_path / "obs.csv"
    fixtures.write_obs(obs, fixtures.disk_points(300, seed=2) + [("a", 200.0, 0.0)])
    proc = run("train", "--obs", obs, "--out", tmp_path / "m.sinr", *SMALL, check=0)
    assert f"{obs}:302: rejected" in proc.stderr


def test_resume_from_final_checkpoint(tmp_path, disk_obs):
    a, b, ckpt = tmp_path / "a.sinr", tmp_path / "b.sinr", tmp_path / "run.sckp"
    run("train", "--obs", disk_obs, "--out", a, "--checkpoint", ckpt, *SMALL, check=0)
    run("train", "--obs", disk_obs, "--out", b, "--resume", ckpt, *SMALL, check=0)
    assert sha256(a) == sha256(b)
    assert run("train", "--obs", disk_obs, "--out", b, "--resume", ckpt, *SMALL[:-2],
               "--layers", 2).returncode == 1


def test_zero_model_exports_mid_gray(tmp_path):
    model = tmp_path / "zero.sinr"
    fixtures.write_zero_mlp(model)
    run("export-raster", "--model", model, "--species", "b", "--resolution", 4,
        "--out", tmp_path / "r", check=0)
    tokens = [l for l in (tmp_path / "r.pgm").read_text().splitlines() if not l.startswith("#")]
    assert tokens[:3] == ["P2", "8 4", "255"]
    pixels = " ".join(tokens[3:]).split()
    assert len(pixels) == 32 and set(pixels) == {"128"}
    _, rows = read_csv(tmp_path / "r.csv")
    assert len(rows) == 32 and {r[2] for r in rows} == {"0.5"}
    # North row first.
    assert rows[0][:2] == ["-157.5", "67.5"]

    proc = run("export-raster", "--model", model, "--species", "zz", "--resolution", 4,
               "--out", tmp_path / "r")
    assert proc.returncode == 1 and "unknown species" in proc.stderr


def test_graymap_quantizes_the_csv(tmp_path):
    model = tmp_path / "north.sinr"
    fixtures.write_north_model(model)
    run("export-raster", "--model", model, "--species", "n", "--resolution", 6,
        "--out", tmp_path / "r", check=0)
    tokens = [l for l in (tmp_path / "r.pgm").read_text().splitlines() if not l.startswith("#")]
    pixels = [int(p) for p in " ".join(tokens[3:]).split()]
    _, rows = read_csv(tmp_path / "r.csv")
    assert [int(255.0 * float(r[2]) + 0.5) for r in rows] == pixels

    run("export-raster", "--model", model, "--species", "n", "--resolution", 6,
        "--out", tmp_path / "b", "--binary-threshold", "fixed:0.5", check=0)
    tokens = [l for l in (tmp_path / "b.pgm").read_text().splitlines() if not l.startswith("#")]
    rows = [r.split() for r in tokens[3:]]
    assert all(set(r) == {"255"} for r in rows[:3]) and all(set(r) == {"0"} for r in rows[3:])
    assert run("export-raster", "--model", model, "--species", "n", "--resolution", 6, "--out",
               tmp_path / "b", "--binary-threshold", "median").returncode == 2


def test_map_with_an_oracle_model(tmp_path):
    model = tmp_path / "north.sinr"
    fixtures.write_north_model(model)
    grid = tmp_path / "grid.txt"
    with open(grid, "w") as f:
        f.write("EVALGRID 4 1\n")
        for cell in range(32):
            f.write(f"n {cell} {int(cell >= 16)}\n")
    for baseline in ("none", "lr"):
        out = run("eval", "map", "--model", model, "--grid", grid, "--baseline", baseline, check=0)
        assert out.stdout.splitlines()[-1].startswith("MAP,1,")

    mlp = tmp_path / "zero.sinr"
    fixtures.write_zero_mlp(mlp, species=("n",))
    assert run("eval", "map", "--model", mlp, "--grid", grid, "--baseline", "lr").returncode == 1


def test_malformed_eval_grid_reports_the_line(tmp_path):
    model = tmp_path / "north.sinr"
    fixtures.write_north_model(model)
    grid = tmp_path / "grid.txt"
    grid.write_text("EVALGRID 4 1\nn 0 1\nn 1 7\n")
    proc = run("eval", "map", "--model", model, "--grid", grid)
    assert proc.returncode == 1
    assert "3" in proc.stderr


def test_grid_baseline_cell_dump(tmp_path):
    obs = tmp_path / "counts.csv"
    fixtures.write_obs(obs, [("j", -170, -80)] * 3 + [("j", -80, -80)])
    grid = tmp_path / "grid.txt"
    grid.write_text("EVALGRID 2 1\nj 0 1\nj 1 1\nj 6 0\n")
    dump = tmp_path / "cells.csv"
    out = run("eval", "map", "--baseline", "grid:2", "--obs", obs, "--grid", grid,
              "--dump-cells", dump, check=0).stdout
    assert out.splitlines()[-1].startswith("MAP,1,")
    header, rows = read_csv(dump)
    assert header == ["species_id", "cell", "lon", "lat", "label", "score"]
    assert [float(r[5]) for r in rows] == [1.0, 1.0 / 3.0, 0.0]
    assert run("eval", "map", "--baseline", "grid:2", "--grid", grid).returncode == 2
    assert run("eval", "map", "--baseline", "grid:0", "--obs", obs, "--grid", grid).returncode == 2


def test_geoprior(tmp_path):
    model = tmp_path / "north.sinr"
    fixtures.write_north_model(model)
    unknown = tmp_path / "unknown.csv"
    unknown.write_text("image_id,true_species_id,lon,lat,scores\n"
                       "i1,x,10,-40,x:0.3,y:0.7\n"
                       "i2,y,10,40,x:0.6,y:0.4\n")
    out = run("eval", "geoprior", "--model", model, "--scores", unknown, check=0).stdout
    assert out.splitlines()[1].split(",")[3] == "0"

    # Species n is ruled out in the south, which fixes image i1.
    known = tmp_path / "known.csv"
    known.write_text("i1,y,10,-40,n:0.6,y:0.4\ni2,n,10,40,n:0.6,y:0.4\n")
    row = run("eval", "geoprior", "--model", model, "--scores", known, check=0).stdout.splitlines()[1]
    assert [float(v) for v in row.split(",")] == [2, 50, 100, 50]


def test_predict_matches_export_and_threads(tmp_path, disk_obs):
    model = tmp_path / "m.sinr"
    run("train", "--obs", disk_obs, "--out", model, *SMALL, check=0)
    run("predict", "--model", model, "--resolution", 64, "--out", tmp_path / "p1.csv",
        env={"SINR_THREADS": "1"}, check=0)
    run("predict", "--model", model, "--resolution", 64, "--out", tmp_path / "p3.csv",
        env={"SINR_THREADS": "3"}, check=0)
    assert (tmp_path / "p1.csv").read_bytes() == (tmp_path / "p3.csv").read_bytes()
    header, rows = read_csv(tmp_path / "p1.csv")
    assert header == ["lon", "lat", "a", "b", "c"] and len(rows) == 128 * 64

    locs = tmp_path / "locs.csv"
    locs.write_text("name,lat,lon\np,40,-100\nq,0,20\n")
    _, rows = read_csv(run("predict", "--model", model, "--locations", locs, "--species", "b",
                           "--out", tmp_path / "q.csv", check=0) and tmp_path / "q.csv")
    assert [r[:2] for r in rows] == [["-100", "40"], ["20", "0"]]
    assert run("predict", "--model", model, "--out", tmp_path / "q.csv").returncode == 2
    assert run("predict", "--model", model, "--resolution", 4, env={"SINR_THREADS": "x"}).returncode == 2


def test_geofeature(tmp_path):
    model = tmp_path / "north.sinr"
    fixtures.write_north_model(model)
    layer = tmp_path / "elev.txt"
    rows, cols = 16, 32
    values = [str(r * 0.5 + (c % 3)) for r in range(rows) for c in range(cols)]
    layer.write_text(f"ENVGRID {rows} {cols} -180 180 -90 90\n" + " ".join(values) + "\n")
    out = run("eval", "geofeature", "--model", model, "--layer", layer, "--block-cells", 2,
              check=0).stdout.splitlines()
    assert out[0] == "layer,r2,alpha"
    assert out[1].startswith("elev,")
    assert out[-1].startswith("mean,")
    assert run("eval", "geofeature", "--baseline", "grid:2", "--layer", layer).returncode == 2


def test_toy_range_map_covers_held_out_positives(tmp_path):
    obs = tmp_path / "obs.csv"
    fixtures.write_obs(obs, fixtures.disk_points(3000, seed=11))
    grid = tmp_path / "grid.txt"
    fixtures.write_disk_eval_grid(grid, 45)
    model = tmp_path / "m.sinr"
    run("train", "--obs", obs, "--out", model, "--epochs", 10, "--batch-size", 256,
        "--hidden-dim", 64, "--lr", 0.002, "--seed", 5, check=0)
    run("export-raster", "--model", model, "--species", "a", "--resolution", 45, "--out",
        tmp_path / "a", "--binary-threshold", f"f1:{grid}", check=0)
    _, rows = read_csv(tmp_path / "a.csv")
    present = {(float(r[0]), float(r[1])) for r in rows if r[3] == "1"}
    held_out = [p for p in fixtures.disk_points(600, seed=99) if p[0] == "a"]
    d = 4.0
    hits = 0
    for _, lon, lat in held_out:
        centroid = (-180 + (int((lon + 180) // d) + 0.5) * d, -90 + (int((lat + 90) // d) + 0.5) * d)
        hits += centroid in present
    assert hits / len(held_out) >= 0.9
