import numpy as np
import pytest

from svfactor import SparsitySets
from svfactor.sparsity import band_mask, mask_from_pairs


def test_band_mask():
    m = band_mask(5, 1).toarray()
    assert np.array_equal(m, (np.abs(np.subtract.outer(range(5), range(5))) <= 1).astype(float))


def test_pairs_are_symmetrized_with_diagonal():
    m = mask_from_pairs(4, [(0, 2)]).toarray()
    assert m[0, 2] == m[2, 0] == 1
    assert np.array_equal(np.diag(m), np.ones(4))
    assert m.sum() == 6
    with pytest.raises(ValueError):
        mask_from_pairs(3, [(0, 3)])


def test_default_sets_are_diagonal():
    sets = SparsitySets()
    assert sets.is_diagonal()
    assert np.array_equal(sets.cross_mask(4).toarray(), np.eye(4))
    assert np.array_equal(sets.joint_mask(2, 3).toarray(), np.eye(6))


def test_joint_is_product_of_bands():
    sets = SparsitySets.banded(time_lag=1, cross_lag=0)
    J = sets.joint_mask(2, 3).toarray()
    assert np.array_equal(J, np.kron(np.eye(2), band_mask(3, 1).toarray()))


def test_row_cap():
    sets = SparsitySets(time_lag=2, max_per_row=3)
    with pytest.raises(ValueError):
        sets.time_mask(10)


def test_explicit_sets_and_full():
    sets = SparsitySets.from_pairs(3, 4, cross_pairs=[(0, 1)], time_pairs=[(1, 3)],
                                   joint_pairs=[((0, 0), (2, 3))])
    assert sets.cross_mask(3).toarray()[1, 0] == 1
    assert sets.time_mask(4).toarray()[3, 1] == 1
    J = sets.joint_mask(3, 4).toarray()
    assert J[0, 11] == J[11, 0] == 1 and J.sum() == 14
    assert SparsitySets.full(2, 3).joint_mask(2, 3).toarray().sum() == 36
    with pytest.raises(ValueError):
        SparsitySets(cross_lag=-1)
    with pytest.raises(ValueError):
        SparsitySets(cross=np.eye(3)).cross_mask(4)
