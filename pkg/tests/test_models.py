import numpy as np
import pytest

from ppmbench.eventlog import EOC, Event, EventLog, Trace, Vocabulary, augment_eoc
from ppmbench.models import (
    AutoencoderPredictor,
    MarkovPredictor,
    MLPPredictor,
    RecurrentPredictor,
    TrainConfig,
    build_predictor,
    fit_ngram_counts,
    load_predictor,
    markov_predict,
    random_search,
    save_predictor,
    train,
)
from ppmbench.splitting import make_prefix_samples, temporal_split

from conftest import make_linear_log, make_random_log


def fast_config(**overrides):
    defaults = dict(hidden=12, layers=1, epochs=6, patience=6, batch_size=16)
    defaults.update(overrides)
    return TrainConfig(**defaults)


@pytest.fixture(scope="module")
def linear_split():
    log = augment_eoc(make_linear_log(60))
    return log, temporal_split(log)


class TestMarkov:
    def test_deterministic_process(self):
        log = augment_eoc(make_linear_log(5, acts=("A", "B", "C")))
        samples = make_prefix_samples(log)
        tables = fit_ngram_counts(samples, 2, log.activity_vocab)
        probs = markov_predict(tables, ("A",), 2, 0.0, log.activity_vocab)
        assert probs[log.activity_vocab.index("B")] == 1.0

    def test_unseen_context_pure_smoothing_is_uniform(self):
        vocab = Vocabulary(["A", "B", "C", "D"])
        tables = fit_ngram_counts([], 2, vocab)
        probs = markov_predict(tables, ("A", "B"), 2, 1.0, vocab)
        assert np.allclose(probs, 0.25)

    def test_two_continuations_equal_probability(self):
        # train = {ABC, ABD} in equal measure; context (A, B)
        traces = []
        for i, acts in enumerate((("A", "B", "C"), ("A", "B", "D"))):
            events = tuple(
                Event(case_id=f"c{i}", activity=a, timestamp_ms=1_000_000 + i * 10_000 + j * 1000)
                for j, a in enumerate(acts)
            )
            traces.append(Trace(case_id=f"c{i}", events=events))
        log = augment_eoc(
            EventLog(traces=tuple(traces), activity_vocab=Vocabulary(["A", "B", "C", "D"]))
        )
        samples = make_prefix_samples(log)
        tables = fit_ngram_counts(samples, 2, log.activity_vocab)
        probs = markov_predict(tables, ("A", "B"), 2, 0.0, log.activity_vocab)
        assert probs[log.activity_vocab.index("C")] == pytest.approx(0.5)
        assert probs[log.activity_vocab.index("D")] == pytest.approx(0.5)

    def test_alpha_zero_reproduces_empirical_frequencies(self):
        # enumeration oracle on a small random log: the model's effective
        # context is the last min(order, prefix length) activities, and with
        # alpha = 0 its distribution must equal the empirical conditional
        # frequency of that context in the training samples
        rng = np.random.default_rng(77)
        log = augment_eoc(make_random_log(rng, 30))
        samples = make_prefix_samples(log)
        order = 2
        predictor = MarkovPredictor(log.activity_vocab, TrainConfig(order=order, alpha=0.0))
        predictor.fit(samples, [], seed=0)
        for sample in samples[:50]:
            probs, _ = predictor.predict(sample.prefix)
            j = min(order, len(sample.prefix))
            ctx = sample.prefix_activities[len(sample.prefix) - j :]
            matches = [
                s
                for s in samples
                if len(s.prefix) >= j and s.prefix_activities[len(s.prefix) - j :] == ctx
            ]
            assert matches  # the sample itself matches its own context
            counts = {}
            for m in matches:
                counts[m.next_activity] = counts.get(m.next_activity, 0) + 1
            total = sum(counts.values())
            for label in log.activity_vocab:
                expected = counts.get(label, 0) / total
                assert probs[log.activity_vocab.index(label)] == pytest.approx(expected)

    def test_probability_vector_invariant(self):
        rng = np.random.default_rng(5)
        log = augment_eoc(make_random_log(rng, 20))
        samples = make_prefix_samples(log)
        predictor = MarkovPredictor(log.activity_vocab, TrainConfig(order=2, alpha=0.5))
        predictor.fit(samples, [], seed=0)
        for sample in samples[:30]:
            probs, delta = predictor.predict(sample.prefix)
            assert probs.shape == (len(log.activity_vocab),)
            assert np.all(probs >= 0.0)
            assert abs(probs.sum() - 1.0) < 1e-6
            assert delta is None or delta >= 0.0

    def test_exact_time_on_deterministic_log(self, linear_split):
        log, split = linear_split
        predictor = MarkovPredictor(log.activity_vocab)
        train(predictor, split, seed=0)
        sample = make_prefix_samples(split.test)[0]
        _, delta = predictor.predict(sample.prefix)
        assert delta == sample.next_time_delta  # exact, constant gaps


class TestNeuralBasics:
    def test_mlp_rejects_zero_hidden(self, linear_split):
        log, split = linear_split
        predictor = MLPPredictor(log.activity_vocab, config=fast_config(hidden=0))
        with pytest.raises(ValueError):
            train(predictor, split, seed=0)

    def test_autoencoder_rejects_undercompleteness_violation(self):
        vocab = Vocabulary(["A", "B", EOC])
        with pytest.raises(ValueError):
            AutoencoderPredictor(vocab, config=TrainConfig(ngram_dim=16, ae_hidden=(16,), time_target=None))
        with pytest.raises(ValueError):
            AutoencoderPredictor(vocab, config=TrainConfig(ngram_dim=16, ae_hidden=(8, 9), time_target=None))

    def test_unknown_cell_rejected(self):
        with pytest.raises(ValueError):
            RecurrentPredictor("transformer", Vocabulary(["A"]))

    def test_probability_invariant_all_models(self, linear_split):
        log, split = linear_split
        sample = make_prefix_samples(split.test)[0]
        for arch in ("mlp", "rnn", "lstm", "gru", "autoencoder"):
            cfg = fast_config(epochs=2, time_target=None if arch == "autoencoder" else "next",
                              ngram_dim=16, ae_hidden=(8, 4), pretrain_epochs=2, freeze_epochs=1)
            predictor = build_predictor(arch, cfg, log.activity_vocab, log.attribute_vocabs)
            train(predictor, split, seed=1)
            probs, delta = predictor.predict(sample.prefix)
            assert probs.shape == (len(log.activity_vocab),)
            assert np.all(probs >= 0.0)
            assert abs(probs.sum() - 1.0) < 1e-6
            if arch == "autoencoder":
                assert delta is None
            else:
                assert delta >= 0.0

    def test_single_activity_log_degenerate(self):
        log = augment_eoc(make_linear_log(20, acts=("A",)))
        split = temporal_split(log)
        predictor = MarkovPredictor(log.activity_vocab)
        train(predictor, split, seed=0)
        sample = make_prefix_samples(split.test)[0]
        probs, _ = predictor.predict(sample.prefix)
        # single observed continuation: all mass on EOC
        assert probs[log.activity_vocab.index(EOC)] == 1.0


class TestTrainingLoop:
    def test_report_invariants(self, linear_split):
        log, split = linear_split
        predictor = RecurrentPredictor("gru", log.activity_vocab, config=fast_config())
        report = train(predictor, split, seed=3)
        assert report.best_epoch == int(np.argmin(report.val_losses))
        assert report.val_losses[report.best_epoch] == min(report.val_losses)
        assert len(report.train_losses) == len(report.val_losses)
        assert report.seed == 3

    def test_same_seed_bit_identical(self, linear_split):
        log, split = linear_split

        def run():
            predictor = RecurrentPredictor("gru", log.activity_vocab, config=fast_config(epochs=4))
            report = train(predictor, split, seed=11)
            return predictor, report

        p1, r1 = run()
        p2, r2 = run()
        assert r1.core() == r2.core()
        for k in p1.params:
            assert np.array_equal(p1.params[k], p2.params[k])

    def test_different_seed_differs(self, linear_split):
        log, split = linear_split
        p1 = RecurrentPredictor("gru", log.activity_vocab, config=fast_config(epochs=3))
        p2 = RecurrentPredictor("gru", log.activity_vocab, config=fast_config(epochs=3))
        r1 = train(p1, split, seed=1)
        r2 = train(p2, split, seed=2)
        assert r1.core() != r2.core()

    def test_early_stopping_respects_patience(self, linear_split):
        log, split = linear_split
        cfg = fast_config(epochs=50, patience=3)
        predictor = RecurrentPredictor("gru", log.activity_vocab, config=cfg)
        report = train(predictor, split, seed=5)
        if len(report.train_losses) < 50:
            stalled = len(report.val_losses) - 1 - report.best_epoch
            assert stalled >= 3

    def test_autoencoder_recon_losses_non_increasing(self, linear_split):
        # cross-stage ordering of the final reconstruction losses is scale- and
        # seed-dependent (each stage reconstructs a different signal); assert
        # it at the shipped seed, plus the robust within-stage improvement
        log, split = linear_split
        cfg = fast_config(
            time_target=None, ngram_dim=16, ae_hidden=(8, 4),
            pretrain_epochs=15, freeze_epochs=2, epochs=3,
        )
        predictor = AutoencoderPredictor(log.activity_vocab, config=cfg)
        train(predictor, split, seed=0)
        finals = [losses[-1] for losses in predictor.recon_losses]
        assert len(finals) == 2
        assert finals[1] <= finals[0]
        for losses in predictor.recon_losses:
            assert losses[-1] <= losses[0]


class TestEmbeddingPath:
    def test_embedding_model_trains_and_predicts(self, linear_split):
        log, split = linear_split
        cfg = fast_config(embedding_dim=5, epochs=3)
        predictor = RecurrentPredictor("gru", log.activity_vocab, config=cfg)
        train(predictor, split, seed=4)
        assert predictor.params["emb"].shape == (len(log.activity_vocab), 5)
        probs, _ = predictor.predict(make_prefix_samples(split.test)[0].prefix)
        assert abs(probs.sum() - 1.0) < 1e-6


class TestCheckpointRoundTrip:
    @pytest.mark.parametrize("arch", ["markov", "mlp", "gru", "autoencoder"])
    def test_save_load_predicts_identically(self, arch, linear_split, tmp_path):
        log, split = linear_split
        cfg = fast_config(
            epochs=2, time_target=None if arch == "autoencoder" else "next",
            ngram_dim=16, ae_hidden=(8, 4), pretrain_epochs=2, freeze_epochs=1,
        )
        predictor = build_predictor(arch, cfg, log.activity_vocab, log.attribute_vocabs)
        train(predictor, split, seed=6)
        save_predictor(predictor, tmp_path / "model", seed=6)
        loaded = load_predictor(tmp_path / "model")
        assert loaded.architecture == predictor.architecture
        for sample in make_prefix_samples(split.test)[:5]:
            p_orig, d_orig = predictor.predict(sample.prefix)
            p_new, d_new = loaded.predict(sample.prefix)
            assert np.array_equal(p_orig, p_new)
            assert d_orig == d_new


class TestRandomSearch:
    def test_seeded_and_sized(self):
        space = {"hidden": [8, 16, 32], "lr": [0.1, 0.01]}
        a = random_search(space, 5, seed=9)
        b = random_search(space, 5, seed=9)
        assert len(a) == 5
        assert [c.hidden for c in a] == [c.hidden for c in b]
        assert [c.lr for c in a] == [c.lr for c in b]
        assert any(c.hidden != a[0].hidden for c in a) or any(c.lr != a[0].lr for c in a)


class TestTimedStateMlp:
    def linear_net(self):
        from ppmbench.petrinet import PetriNet, Transition

        acts = ["A", "B", "C", "D"]
        places = tuple(f"p{i}" for i in range(5))
        transitions = tuple(Transition(f"t{a}", a) for a in acts)
        arcs = []
        for i, a in enumerate(acts):
            arcs.append((f"p{i}", f"t{a}"))
            arcs.append((f"t{a}", f"p{i+1}"))
        return PetriNet(
            places=places, transitions=transitions, arcs=tuple(arcs),
            initial_marking={"p0": 1},
        )

    def test_timed_state_input_learns_linear_process(self, linear_split):
        log, split = linear_split
        cfg = fast_config(input_mode="timed_state", epochs=15, time_target="next")
        predictor = MLPPredictor(
            log.activity_vocab, log.attribute_vocabs, cfg, petri_net=self.linear_net()
        )
        train(predictor, split, seed=0)
        assert predictor.decay_seconds > 0  # defaulted to the longest train case
        samples = make_prefix_samples(split.test)
        hits = 0
        for s in samples:
            probs, _ = predictor.predict(s.prefix)
            if log.activity_vocab.label(int(np.argmax(probs))) == s.next_activity:
                hits += 1
        assert hits / len(samples) == 1.0

    def test_timed_state_requires_net(self):
        vocab = Vocabulary(["A", EOC])
        with pytest.raises(ValueError):
            MLPPredictor(vocab, config=TrainConfig(input_mode="timed_state"))


class TestDeterministicLearnability:
    def test_mlp_reaches_full_accuracy(self, linear_split):
        # the process is a function of the prefix, so the flat encoding
        # suffices; the Markov oracle proves the target is attainable
        log, split = linear_split
        cfg = fast_config(hidden=32, layers=1, epochs=30, patience=30)
        predictor = MLPPredictor(log.activity_vocab, config=cfg)
        train(predictor, split, seed=0)
        samples = make_prefix_samples(split.test)
        hits = sum(
            1
            for s in samples
            if log.activity_vocab.label(int(np.argmax(predictor.predict(s.prefix)[0])))
            == s.next_activity
        )
        assert hits / len(samples) == 1.0
