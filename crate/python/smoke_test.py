"""Smoke test for the pytwostream extension.

Build first:
    cargo build --release -p twostream-py
    cp target/release/libpytwostream.so python/pytwostream.so
then run `python3 python/smoke_test.py`.
"""

import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import pytwostream as ts  # noqa: E402


def main():
    img, mask = ts.gen_vessel(seed=7, size=64)
    assert len(img) == 64 and len(img[0]) == 64
    assert ts.gen_vessel(seed=7, size=64) == (img, mask)
    assert ts.jaccard(mask, mask) == 1.0

    eq = ts.hist_equalize(img)
    assert eq == ts.clahe(img, tiles=(1, 1), clip=1.0)

    assert ts.roc_auc([0.1, 0.4, 0.35, 0.8], [False, False, True, True]) == 0.75
    assert ts.accuracy([0, 1, 1, 3], [0, 1, 2, 3]) == 0.75
    scores = ts.fused_scores([2, 1, 0], [0, 1, 2], 0.5)
    assert all(abs(s - 1 / 3) < 1e-12 for s in scores)

    samples = [[float(i == j) for j in range(6)] for i in range(5)]
    pca = ts.EigenModel.fit(samples, 3)
    assert pca.k == 3 and len(pca.project(samples[0])) == 3

    feats = [[0.0, 0.0], [0.2, 0.1], [3.0, 3.0], [3.1, 2.9], [0.0, 3.0], [0.1, 3.2]]
    svm = ts.MultiSvm.train(feats, [0, 0, 1, 1, 2, 2], 3, kernel="rbf", c=10.0)
    assert [svm.predict(f) for f in feats] == [0, 0, 1, 1, 2, 2]

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.svm")
        svm.save(path)
        assert ts.MultiSvm.load(path).votes(feats[2]) == svm.votes(feats[2])
        n = ts.gen_disease_dataset(os.path.join(d, "dis"), seed=0, classes=3, per_class=2, size=64)
        assert n == 6

    print("pytwostream smoke test passed")


if __name__ == "__main__":
    main()
