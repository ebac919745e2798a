import numpy as np
import pytest

from accentlab import aid, assess, ctc, modelio
from accentlab import numkit as nk
from tests.test_aid import two_cluster_corpus, variance_coded_corpus
from tests.test_ctc import toy_utts


def test_fusion_round_trip(tmp_path):
    utts = two_cluster_corpus()
    model = aid.train_fusion(utts[:72], utts[72:], hyper=aid.TrainConfig(
        epochs=1, fusion_hidden=(6,), seed=0))
    modelio.save_model(model, tmp_path / "m")
    back = modelio.load_model(tmp_path / "m")
    assert isinstance(back, aid.FusionModel)
    assert back.classes == model.classes
    assert back.streams == model.streams
    assert back.dims == model.dims
    # float32 storage: predictions agree to f4 precision
    p1 = aid.predict(model, utts[3])
    p2 = aid.predict(back, utts[3])
    assert np.allclose(p1, p2, atol=1e-5)


def test_frame_encoder_round_trip(tmp_path):
    utts = variance_coded_corpus()[:12]
    enc = aid.train_e2e_aid(utts[:8], utts[8:], hyper=aid.TrainConfig(
        epochs=1, enc_hidden=4, d_aid=3, seed=0))
    modelio.save_model(enc, tmp_path / "m")
    back = modelio.load_model(tmp_path / "m")
    assert isinstance(back, aid.FrameEncoder)
    assert back.classes == enc.classes
    assert back.frame_net.layers[-1].activation == "relu"
    p1 = aid.predict(enc, utts[0])
    p2 = aid.predict(back, utts[0])
    assert np.allclose(p1, p2, atol=1e-5)


def test_ctc_round_trip(tmp_path):
    table = ctc.SymbolTable("ab")
    utts = toy_utts(table, ["ab", "ba"])
    model = ctc.train_ctc(utts, utts, hyper=ctc.CtcTrainConfig(
        epochs=2, hidden=4, seed=0), table=table)
    modelio.save_model(model, tmp_path / "m")
    back = modelio.load_model(tmp_path / "m")
    assert isinstance(back, ctc.CtcModel)
    assert back.table.symbols == "ab"
    assert back.net.out_dim == 3
    assert ctc.transcribe(back, utts[0].features) == \
        ctc.transcribe(model, utts[0].features)


def test_second_save_is_byte_identical(tmp_path):
    utts = two_cluster_corpus()[:20]
    model = aid.train_fusion(utts[:16], utts[16:], hyper=aid.TrainConfig(
        epochs=1, fusion_hidden=(4,), seed=1))
    modelio.save_model(model, tmp_path / "a")
    back = modelio.load_model(tmp_path / "a")
    modelio.save_model(back, tmp_path / "b")
    for name in sorted(p.name for p in (tmp_path / "a").iterdir()):
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes(), name


def test_archive_errors(tmp_path):
    with pytest.raises(TypeError):
        modelio.save_model(object(), tmp_path / "x")
    with pytest.raises(ValueError, match="model.json"):
        modelio.load_model(tmp_path)
    (tmp_path / "model.json").write_text('{"format": 9}')
    with pytest.raises(ValueError, match="format"):
        modelio.load_model(tmp_path)


def test_archive_rejects_tampered_dims(tmp_path):
    import json
    utts = two_cluster_corpus()[:20]
    model = aid.train_fusion(utts[:16], utts[16:], hyper=aid.TrainConfig(
        epochs=1, fusion_hidden=(4,), seed=0))
    d = tmp_path / "m"
    modelio.save_model(model, d)
    header = json.loads((d / "model.json").read_text())
    header["net"]["dims"][0] += 1
    (d / "model.json").write_text(json.dumps(header))
    with pytest.raises(ValueError, match="dims"):
        modelio.load_model(d)


def test_loaded_binary_model_scores(tmp_path):
    # archives feed the accentedness scorer directly
    utts = two_cluster_corpus()
    model = aid.train_fusion(utts[:72], utts[72:], hyper=aid.TrainConfig(
        epochs=1, fusion_hidden=(4,), seed=0))
    modelio.save_model(model, tmp_path / "m")
    back = modelio.load_model(tmp_path / "m")
    s = assess.aid_accentedness_score(back, utts[0])
    assert s <= 0.0
