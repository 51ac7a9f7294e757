import numpy as np
import pytest

from cacon.autodiff import Tape, backward, tensor
from cacon.errors import ContractError, DomainError, ShapeError
from cacon.losses import (
    EmbeddingBatch,
    TripletBatch,
    adversarial_triplet_loss,
    batch_loss,
    batch_loss_pair,
    cosine_sim,
    nt_xent_pair,
    nt_xent_triplet,
    sim_matrix,
    validate_sim_matrix,
)

from _oracles import (
    adversarial_triplet_ref,
    batch_loss_pair_ref,
    batch_loss_triplet_ref,
    central_diff,
    cosine_ref,
    nt_xent_pair_ref,
    nt_xent_triplet_ref,
    rel_err,
    sim_matrix_ref,
)

TAU = 0.1


def _triplet_batch(rng, b, d=6):
    z = rng.standard_normal((3 * b, d))
    return EmbeddingBatch(tensor(z), n_sources=b, n_views=3), z


def _pair_batch(rng, b, d=6):
    z = rng.standard_normal((2 * b, d))
    return EmbeddingBatch(tensor(z), n_sources=b, n_views=2), z


class TestEmbeddingBatch:
    def test_row_count_checked(self):
        with pytest.raises(ShapeError, match="rows"):
            EmbeddingBatch(tensor(np.zeros((5, 4))), n_sources=2, n_views=3)

    def test_positives_congruent_mod_sources(self):
        batch, _ = _triplet_batch(np.random.default_rng(0), 4)
        assert batch.positives(0) == [4, 8]
        assert batch.positives(5) == [1, 9]
        assert batch.positives(11) == [3, 7]

    def test_positives_range_checked(self):
        batch, _ = _triplet_batch(np.random.default_rng(0), 2)
        with pytest.raises(ContractError):
            batch.positives(6)


class TestSimMatrix:
    def test_matches_reference(self, rngs):
        for rng in rngs(5):
            z = rng.standard_normal((7, 5))
            s = sim_matrix(tensor(z))
            assert np.allclose(s.data, sim_matrix_ref(z), atol=1e-12)
            validate_sim_matrix(s.data)

    def test_cosine_sim_matches_reference(self, rngs):
        for rng in rngs(5):
            u, v = rng.standard_normal((2, 9))
            got = float(cosine_sim(tensor(u), tensor(v)).data)
            assert rel_err(got, cosine_ref(u, v)) < 1e-12

    def test_validate_rejects_bad_matrices(self):
        with pytest.raises(ShapeError):
            validate_sim_matrix(np.zeros((2, 3)))
        bad = np.eye(3)
        bad[0, 1] = 0.5
        with pytest.raises(ContractError, match="symmetric"):
            validate_sim_matrix(bad)
        bad = np.full((2, 2), 0.9)
        with pytest.raises(ContractError, match="diagonal"):
            validate_sim_matrix(bad)
        bad = np.eye(2)
        bad[0, 1] = bad[1, 0] = 1.5
        with pytest.raises(ContractError, match=r"\[-1, 1\]"):
            validate_sim_matrix(bad)


class TestAnchorLosses:
    def test_pair_matches_reference(self, rngs):
        for rng in rngs(8):
            z = rng.standard_normal((8, 5))
            s = sim_matrix(tensor(z))
            sref = sim_matrix_ref(z)
            for (a, p) in [(0, 4), (3, 7), (5, 1)]:
                got = float(nt_xent_pair(a, p, s, TAU).data)
                assert rel_err(got, nt_xent_pair_ref(sref, a, p, TAU)) < 1e-10

    def test_triplet_matches_reference(self, rngs):
        for rng in rngs(8):
            z = rng.standard_normal((9, 5))
            s = sim_matrix(tensor(z))
            sref = sim_matrix_ref(z)
            for r in range(9):
                got = float(nt_xent_triplet(r, s, TAU).data)
                assert rel_err(got, nt_xent_triplet_ref(sref, r, TAU)) < 1e-10

    def test_anchor_equals_positive_rejected(self):
        s = sim_matrix(tensor(np.random.default_rng(0).standard_normal((4, 3))))
        with pytest.raises(ContractError, match="distinct"):
            nt_xent_pair(1, 1, s, TAU)

    def test_non_multiple_of_three_rejected(self):
        s = sim_matrix(tensor(np.random.default_rng(0).standard_normal((4, 3))))
        with pytest.raises(ContractError, match="3B rows"):
            nt_xent_triplet(0, s, TAU)

    def test_temperature_must_be_positive(self):
        s = sim_matrix(tensor(np.random.default_rng(0).standard_normal((6, 3))))
        with pytest.raises(DomainError, match="temperature"):
            nt_xent_triplet(0, s, 0.0)
        with pytest.raises(DomainError):
            nt_xent_triplet(0, s, -1.0)


class TestBatchLoss:
    def test_triplet_matches_reference(self, rngs):
        for rng in rngs(10):
            batch, z = _triplet_batch(rng, int(rng.integers(1, 6)))
            got = float(batch_loss(batch, TAU).data)
            assert rel_err(got, batch_loss_triplet_ref(z, TAU)) < 1e-10

    def test_pair_matches_reference(self, rngs):
        for rng in rngs(10):
            batch, z = _pair_batch(rng, int(rng.integers(2, 7)))
            got = float(batch_loss_pair(batch, TAU).data)
            assert rel_err(got, batch_loss_pair_ref(z, TAU)) < 1e-10

    def test_batch_is_mean_of_anchor_losses(self, rngs):
        (rng,) = rngs(1)
        batch, z = _triplet_batch(rng, 4)
        s = sim_matrix(tensor(z))
        per = [float(nt_xent_triplet(r, s, TAU).data) for r in range(12)]
        got = float(batch_loss(batch, TAU).data)
        assert rel_err(got, float(np.mean(per))) < 1e-12

    def test_single_source_triplet_loss_is_exactly_zero(self, rngs):
        for rng in rngs(5):
            batch, _ = _triplet_batch(rng, 1)
            assert float(batch_loss(batch, TAU).data) == 0.0

    def test_identical_batch_closed_form(self):
        for b in (2, 3, 5):
            row = np.full((3 * b, 4), 0.3)
            batch = EmbeddingBatch(tensor(row), n_sources=b, n_views=3)
            got = float(batch_loss(batch, TAU).data)
            assert abs(got - np.log((3 * b - 1) / 2.0)) < 1e-6

    def test_identical_pair_batch_closed_form(self):
        for b in (2, 4):
            row = np.full((2 * b, 4), 0.3)
            batch = EmbeddingBatch(tensor(row), n_sources=b, n_views=2)
            got = float(batch_loss_pair(batch, TAU).data)
            assert abs(got - np.log(2 * b - 1)) < 1e-6

    def test_loss_is_nonnegative(self, rngs):
        for rng in rngs(20):
            batch, _ = _triplet_batch(rng, int(rng.integers(1, 5)))
            assert float(batch_loss(batch, TAU).data) >= 0.0

    def test_row_scale_invariance(self, rngs):
        (rng,) = rngs(1)
        batch, z = _triplet_batch(rng, 3)
        scales = rng.uniform(0.1, 10.0, size=(9, 1))
        scaled = EmbeddingBatch(tensor(z * scales), n_sources=3, n_views=3)
        a = float(batch_loss(batch, TAU).data)
        b = float(batch_loss(scaled, TAU).data)
        assert rel_err(a, b) < 1e-10

    def test_view_count_enforced(self, rngs):
        (rng,) = rngs(1)
        tb, _ = _triplet_batch(rng, 2)
        pb, _ = _pair_batch(rng, 2)
        with pytest.raises(ContractError):
            batch_loss(pb, TAU)
        with pytest.raises(ContractError):
            batch_loss_pair(tb, TAU)

    def test_gradient_matches_finite_differences(self, rngs):
        for rng in rngs(3):
            z0 = rng.standard_normal((6, 4))

            def f(zflat):
                zz = tensor(zflat.reshape(6, 4))
                b = EmbeddingBatch(zz, n_sources=2, n_views=3)
                return float(batch_loss(b, TAU).data)

            tape = Tape()
            leaf = tensor(z0)
            loss = batch_loss(EmbeddingBatch(leaf, 2, 3), TAU, tape)
            g = backward(loss, tape).wrt(leaf).reshape(-1)
            fd = central_diff(f, z0.reshape(-1))
            denom = max(np.linalg.norm(fd), 1e-12)
            assert np.linalg.norm(g - fd) / denom < 1e-4

    def test_separated_clusters_beat_identical_views_of_one_source(self, rngs):
        (rng,) = rngs(1)
        # two sources far apart, three identical views each: near-ideal batch
        a = np.array([1.0, 0.0, 0.0, 0.0])
        b = np.array([0.0, 1.0, 0.0, 0.0])
        z = np.stack([a, b, a, b, a, b])
        ideal = EmbeddingBatch(tensor(z), n_sources=2, n_views=3)
        noisy = EmbeddingBatch(
            tensor(z + rng.normal(0, 0.5, z.shape)), n_sources=2, n_views=3)
        assert float(batch_loss(ideal, TAU).data) < \
            float(batch_loss(noisy, TAU).data)


class TestTripletBatchGrid:
    def test_row_layout(self):
        emb = np.arange(12, dtype=np.float64).reshape(6, 2)
        tb = TripletBatch(emb, n_classes=3, images_per_class=2)
        assert list(tb.positive_rows(1, 0)) == [3]
        assert list(tb.negative_rows(1)) == [0, 1, 4, 5]

    def test_shape_and_count_checks(self):
        with pytest.raises(ShapeError):
            TripletBatch(np.zeros((5, 2)), n_classes=3, images_per_class=2)
        with pytest.raises(ContractError):
            TripletBatch(np.zeros((2, 2)), n_classes=1, images_per_class=2)
        with pytest.raises(DomainError):
            TripletBatch(np.zeros((4, 2)), n_classes=2, images_per_class=2,
                         margin=-0.1)


class TestAdversarialLoss:
    def test_matches_reference(self, rngs):
        for rng in rngs(10):
            t = int(rng.integers(2, 5))
            s = int(rng.integers(2, 5))
            emb = rng.standard_normal((t * s, 4))
            tb = TripletBatch(emb, n_classes=t, images_per_class=s, margin=0.5)
            got = adversarial_triplet_loss(tb)
            ref = adversarial_triplet_ref(emb, t, s, 0.5)
            assert rel_err(got, ref) < 1e-10

    def test_hand_example(self):
        # 2 classes x 2 images on a line: 0, 1, 4, 5
        emb = np.array([[0.0], [1.0], [4.0], [5.0]])
        tb = TripletBatch(emb, n_classes=2, images_per_class=2, margin=0.5)
        # anchor 0: max_p=1 (row 1), min_n=16 (row 2); hinge 0; D(2,1)=9; 9-16=-7
        # anchor 1: max_p=1 (row 0), min_n=9 (row 2); hinge 0; D(2,0)=16; 16-9=7
        # anchor 2: max_p=1 (row 3), min_n=9 (row 1); hinge 0; D(1,3)=16; 16-9=7
        # anchor 3: max_p=1 (row 2), min_n=16 (row 1); hinge 0; D(1,2)=9; 9-16=-7
        assert adversarial_triplet_loss(tb) == pytest.approx(0.0, abs=1e-12)

    def test_hinge_activates_when_classes_collide(self):
        emb = np.array([[0.0], [0.1], [0.05], [0.15]])
        tb = TripletBatch(emb, n_classes=2, images_per_class=2, margin=0.5)
        ref = adversarial_triplet_ref(emb, 2, 2, 0.5)
        assert adversarial_triplet_loss(tb) == pytest.approx(ref, rel=1e-12)
        assert adversarial_triplet_loss(tb) > 0.0

    def test_ties_take_first_index(self):
        # all positives equidistant, all negatives equidistant: p*, n* are the
        # first rows of each list; the unhinged term then pins the choice
        emb = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0],
                        [0.0, 2.0], [0.0, -2.0], [3.0, 0.0]])
        tb = TripletBatch(emb, n_classes=2, images_per_class=3, margin=0.0)
        got = adversarial_triplet_loss(tb)
        ref = adversarial_triplet_ref(emb, 2, 3, 0.0)
        assert rel_err(got, ref) < 1e-12

    def test_well_separated_clusters_score_below_mixed(self, rngs):
        (rng,) = rngs(1)
        tight = np.vstack([rng.normal(0, 0.01, (3, 4)),
                           rng.normal(10, 0.01, (3, 4))])
        mixed = rng.normal(0, 1.0, (6, 4))
        a = adversarial_triplet_loss(
            TripletBatch(tight, n_classes=2, images_per_class=3))
        b = adversarial_triplet_loss(
            TripletBatch(mixed, n_classes=2, images_per_class=3))
        assert a < b
