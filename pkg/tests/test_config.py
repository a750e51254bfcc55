"""Configuration parsing: shipped variants, schema violations, line numbers."""

import pytest

from rdrnet.config import load_config, parse_config, resolve_config
from rdrnet.errors import ConfigError
from rdrnet.network import VARIANTS, build, forward

from conftest import rand_tensor

GOOD = """\
variant = tiny
num_classes = 4
head_channels = 32

[stem]
widths = 8, 8, 16
blocks = 1, 1, 1

[semantic]
widths = 32, 64, 128
blocks = 1, 1, 1

[detail]
widths = 16, 16, 32
blocks = 1, 1, 1
"""


class TestShippedConfigs:
    @pytest.mark.parametrize("name", list(VARIANTS))
    def test_matches_builtin_variant(self, name):
        assert resolve_config(name) == VARIANTS[name]

    def test_micro_builds_and_runs(self, rng):
        cfg = resolve_config("micro")
        net = build(cfg, 3)
        out = forward(net, rand_tensor(rng, (1, 3, 64, 64)))
        assert out.dims == (1, cfg.num_classes, 64, 64)

    def test_table_widths_from_file(self):
        cfg = resolve_config("rdrnet-s")
        assert cfg.stem_widths == (32, 32, 64)
        assert cfg.semantic_widths == (128, 256, 512)
        assert cfg.head_channels == 128

    def test_unknown_name(self):
        with pytest.raises(ConfigError):
            resolve_config("rdrnet-xxl")


class TestParsing:
    def test_good_text(self):
        cfg = parse_config(GOOD)
        assert cfg.variant == "tiny"
        assert cfg.aux_head is True  # defaulted

    def test_missing_head_channels(self):
        text = GOOD.replace("head_channels = 32\n", "")
        with pytest.raises(ConfigError) as exc:
            parse_config(text)
        assert "head_channels" in str(exc.value)

    def test_unknown_key_reports_line(self):
        text = GOOD + "\n[stem]\n"  # re-open section
        text = GOOD.replace("[detail]", "[detail]\nbogus = 1")
        with pytest.raises(ConfigError) as exc:
            parse_config(text)
        assert "bogus" in str(exc.value)
        assert exc.value.line is not None

    def test_unknown_section(self):
        with pytest.raises(ConfigError) as exc:
            parse_config(GOOD + "\n[decoder]\nfoo = 1\n")
        assert "[decoder]" in str(exc.value)

    def test_bad_integer(self):
        text = GOOD.replace("num_classes = 4", "num_classes = four")
        with pytest.raises(ConfigError) as exc:
            parse_config(text)
        assert exc.value.line == 2

    def test_wrong_tuple_arity(self):
        text = GOOD.replace("widths = 8, 8, 16", "widths = 8, 8")
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_duplicate_key(self):
        text = GOOD + "num_classes = 4\n"
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_semantic_invariant_enforced(self):
        text = GOOD.replace("widths = 32, 64, 128", "widths = 32, 64, 96")
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.cfg")

    def test_ablation_section(self):
        cfg = parse_config(GOOD + "\n[ablation]\nfusion1 = false\nrb_residual = off\n")
        assert cfg.enable_fusion1 is False
        assert cfg.rb_use_residual is False
        assert cfg.enable_fusion2 is True
