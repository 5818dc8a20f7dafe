import pytest

from convsearch.config import (
    ConfigError,
    gen_config_from,
    model_config_from,
    parse_config_file,
    train_config_from,
)


def write(tmp_path, text):
    path = tmp_path / "exp.cfg"
    path.write_text(text)
    return str(path)


def test_parse_basic_file(tmp_path):
    path = write(tmp_path, """
# experiment settings
n_topics = 5
p_shift = 0.4       # frequent shifts
epochs=3
gen_on = false
""")
    mapping = parse_config_file(path)
    assert mapping == {"n_topics": "5", "p_shift": "0.4", "epochs": "3",
                       "gen_on": "false"}


def test_unknown_key_rejected(tmp_path):
    path = write(tmp_path, "n_topcs = 5\n")
    with pytest.raises(ConfigError, match="n_topcs"):
        parse_config_file(path)


def test_duplicate_key_rejected(tmp_path):
    path = write(tmp_path, "epochs = 1\nepochs = 2\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_file(path)


def test_malformed_line_rejected(tmp_path):
    path = write(tmp_path, "epochs\n")
    with pytest.raises(ConfigError, match="key = value"):
        parse_config_file(path)


def test_gen_config_extraction_and_seed_override(tmp_path):
    mapping = parse_config_file(write(tmp_path, "n_topics = 6\nseed = 3\n"))
    config = gen_config_from(mapping)
    assert config.n_topics == 6 and config.seed == 3
    assert gen_config_from(mapping, seed_override=99).seed == 99


def test_model_config_extraction(tmp_path):
    mapping = parse_config_file(write(tmp_path, "d_model = 32\nn_layers = 1\n"))
    config = model_config_from(mapping, vocab_size=50)
    assert config.d_model == 32 and config.n_layers == 1
    assert config.vocab_size == 50


def test_train_config_extraction(tmp_path):
    mapping = parse_config_file(write(tmp_path, """
epochs = 4
learning_rate = 0.003
lambda_g = 0.1
tau = 0.07
igl_on = false
sampling_mode = full_history
grad_clip = 2.5
"""))
    config = train_config_from(mapping)
    assert config.epochs == 4
    assert config.learning_rate == pytest.approx(0.003)
    assert config.weights.lambda_g == pytest.approx(0.1)
    assert config.weights.tau == pytest.approx(0.07)
    assert config.ablation.igl_on is False
    assert config.sampling_mode == "full_history"
    assert config.grad_clip == pytest.approx(2.5)


def test_train_config_defaults_follow_reported_settings(tmp_path):
    config = train_config_from({})
    assert config.epochs == 1
    assert config.batch_size == 24
    assert config.learning_rate == pytest.approx(1e-4)
    assert config.weights.lambda_igl == pytest.approx(1.0)
    assert config.weights.lambda_g == pytest.approx(0.2)


def test_grad_clip_none(tmp_path):
    mapping = parse_config_file(write(tmp_path, "grad_clip = none\n"))
    assert train_config_from(mapping).grad_clip is None


def test_bad_bool_rejected(tmp_path):
    mapping = parse_config_file(write(tmp_path, "gen_on = maybe\n"))
    with pytest.raises(ConfigError):
        train_config_from(mapping)


def test_bad_number_rejected(tmp_path):
    mapping = parse_config_file(write(tmp_path, "epochs = three\n"))
    with pytest.raises(ConfigError):
        train_config_from(mapping)
