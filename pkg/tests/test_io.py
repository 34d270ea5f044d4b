import json
import os

import numpy as np
import pytest

from msaw import storage as S
from msaw.config import ConfigError, config_from_dict, load_config, parse_config
from msaw.gibbs import TorusField, sample_gff
from msaw.lattice import SpectralCache, Torus
from msaw.seeding import replica_rng, replica_seed

MINIMAL = """
[model]
gamma = 1.0
interaction = false
[lattice]
d = 3
L = 4
[run]
T = 10
replicas = 30
seed = 1
"""


class TestConfig:
    def test_minimal(self):
        cfg = parse_config(MINIMAL)
        assert cfg.spec.gamma == 1.0 and not cfg.spec.interaction
        assert cfg.sample_times == [2.5, 5.0, 7.5, 10.0]

    def test_all_errors_reported(self):
        text = MINIMAL.replace("gamma = 1.0", "gamma = 1.0\nbogus = 2") + "\n[extra]\nx = 1\n"
        with pytest.raises(ConfigError) as exc:
            parse_config(text)
        assert len(exc.value.errors) == 2

    def test_type_errors(self):
        with pytest.raises(ConfigError, match="L must be int"):
            parse_config(MINIMAL.replace("L = 4", "L = 4.5"))

    def test_missing_required(self):
        with pytest.raises(ConfigError, match="missing required key 'seed'"):
            parse_config(MINIMAL.replace("seed = 1", ""))

    def test_bad_sample_times(self):
        with pytest.raises(ConfigError, match="strictly increasing"):
            parse_config(MINIMAL.replace("seed = 1", "seed = 1\nsample_times = [5.0, 2.0]"))

    def test_syntax_error(self):
        with pytest.raises(ConfigError, match="syntax"):
            parse_config("[model\n")

    def test_invalid_rate_spec(self):
        with pytest.raises(ConfigError, match="gamma must be positive"):
            parse_config(MINIMAL.replace("gamma = 1.0", "gamma = -1.0"))

    def test_hash_ignores_output(self):
        a = parse_config(MINIMAL)
        assert a.hash() == a.with_overrides(out="/elsewhere").hash()
        assert a.hash() != a.with_overrides(seed=2).hash()

    def test_overrides_do_not_alias(self):
        a = parse_config(MINIMAL)
        a.with_overrides(seed=7)
        assert a.seed == 1

    def test_non_utf8(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_bytes(b"\xff\xfe")
        with pytest.raises(ConfigError, match="UTF-8"):
            load_config(p)

    @pytest.mark.parametrize("name", ["srw.toml", "quartic.toml"])
    def test_shipped_configs(self, name):
        here = os.path.join(os.path.dirname(__file__), "..", "configs", name)
        assert load_config(here).lattice["d"] == 3

    def test_from_dict_rejects_unknown_task(self):
        raw = parse_config(MINIMAL).physics_dict()
        raw = {k: v for k, v in raw.items() if v not in ({}, None)}
        raw["task"] = "dance"
        with pytest.raises(ConfigError, match="task must be one of"):
            config_from_dict(raw)


class TestSeeding:
    def test_independent_streams(self):
        a = replica_rng(1, 0, 0).random(4)
        assert not np.array_equal(a, replica_rng(1, 1, 0).random(4))
        assert not np.array_equal(a, replica_rng(1, 0, 1).random(4))
        assert np.array_equal(a, replica_rng(1, 0, 0).random(4))

    def test_integer_seed(self):
        assert replica_seed(3, 5) == replica_seed(3, 5)
        assert 0 <= replica_seed(3, 5) < 2**64


class TestStorage:
    def test_field_roundtrip(self, tmp_path):
        f = sample_gff(SpectralCache.build(Torus(3, 4)), 17)
        S.save_field(tmp_path / "f.bin", f)
        g = S.load_field(tmp_path / "f.bin")
        assert np.array_equal(f.values, g.values) and g.tag == f.tag and g.seed == 17
        raw = (tmp_path / "f.bin").read_bytes()
        assert raw[:8] == b"MSAWFLD1" and len(raw) == 28 + 8 * 64

    def test_corrupt(self):
        f = TorusField(Torus(2, 2), np.zeros((2, 2)))
        buf = S.field_to_bytes(f)
        with pytest.raises(ValueError):
            S.field_from_bytes(b"X" + buf[1:])
        with pytest.raises(ValueError):
            S.field_from_bytes(buf + b"\0")

    def test_walker_roundtrip(self):
        t = Torus(3, 3)
        rng = np.random.default_rng(1)
        ell = rng.random(t.shape) + 5.0
        buf = S.walker_to_bytes(ell, t, 12.5, [3, -4, 1], 99, rng.bit_generator.state, seed=8)
        out = S.walker_from_bytes(buf)
        assert np.array_equal(out["local_time"], ell)
        assert out["X"].tolist() == [3, -4, 1] and out["jump_count"] == 99 and out["t"] == 12.5
        rng2 = np.random.default_rng()
        rng2.bit_generator.state = out["rng_state"]
        assert rng2.random() == rng.random()

    def test_csv(self):
        f = TorusField(Torus(1, 3), np.array([1.0, -1.0, 0.0]))
        assert S.field_to_csv(f).splitlines() == ["x0,value", "0,1.0", "1,-1.0", "2,0.0"]

    def test_json_deterministic(self, tmp_path):
        S.write_json(tmp_path / "a.json", {"b": np.float64(1.5), "a": np.arange(2)})
        assert json.loads((tmp_path / "a.json").read_text()) == {"a": [0, 1], "b": 1.5}

    def test_jsonl(self, tmp_path):
        S.write_text(tmp_path / "x.jsonl", S.jsonl_lines([{"t": 1.0}, {"t": 2.0}]))
        assert [r["t"] for r in S.read_jsonl(tmp_path / "x.jsonl")] == [1.0, 2.0]

    def test_atomic_write_leaves_no_temp_on_failure(self, tmp_path):
        with pytest.raises(RuntimeError):
            with S.atomic_open(tmp_path / "y.txt") as fh:
                fh.write("partial")
                raise RuntimeError
        assert os.listdir(tmp_path) == []
