import numpy as np

from apps.tensors.tensor import precision

from .batching import Batcher, batch_slices
from .exceptions import DatasetError
from .index import assign_splits, build_index, split_counts
from .test_fixtures import DatasetTestCase


class DatasetIndexTestCase(DatasetTestCase):
    """Test directory indexing and seeded splits"""

    def test_pairs_match_on_stem(self):
        """Test that pairs are matched by stem and kept in stem order"""
        for stem in ('b', 'a', 'c'):
            self.write_pair(self.tmp, stem, np.zeros((2, 2, 3)), np.zeros((2, 2)))
        index = build_index(self.tmp, fractions=(1.0, 0.0, 0.0))
        self.assertEqual([image.stem for image, _ in index.pairs], ['a', 'b', 'c'])
        self.assertTrue(all(image.stem == mask.stem for image, mask in index.pairs))

    def test_missing_mask(self):
        """Test that an image without a mask is an error"""
        self.write_pair(self.tmp, 'a', np.zeros((2, 2, 3)), np.zeros((2, 2)))
        (self.tmp / 'masks' / 'a.pgm').unlink()
        with self.assertRaises(DatasetError):
            build_index(self.tmp)

    def test_empty_or_missing_directories(self):
        """Test that an empty dataset and a missing layout are errors"""
        with self.assertRaises(DatasetError):
            build_index(self.tmp)
        (self.tmp / 'images').mkdir()
        (self.tmp / 'masks').mkdir()
        with self.assertRaises(DatasetError):
            build_index(self.tmp)

    def test_splits_partition_and_are_seeded(self):
        """Test that splits cover every index once and depend only on the seed"""
        splits = assign_splits(50, (0.8, 0.1, 0.1), seed=3)
        self.assertEqual([len(splits[name]) for name in ('train', 'val', 'test')], [40, 5, 5])
        everything = sorted(splits['train'] + splits['val'] + splits['test'])
        self.assertEqual(everything, list(range(50)))
        self.assertEqual(splits, assign_splits(50, (0.8, 0.1, 0.1), seed=3))
        self.assertNotEqual(splits, assign_splits(50, (0.8, 0.1, 0.1), seed=4))

    def test_bad_fractions(self):
        """Test fractions that do not sum to one or leave no training data"""
        with self.assertRaises(DatasetError):
            split_counts(10, (0.5, 0.2, 0.2))
        with self.assertRaises(DatasetError):
            split_counts(2, (0.0, 0.5, 0.5))

    def test_split_lookup(self):
        """Test named split access and the whole-index alias"""
        index = self.synthetic(count=10, fractions=(0.6, 0.2, 0.2))
        self.assertEqual(len(index.split('train')), 6)
        self.assertEqual(len(index.split('all')), 10)
        with self.assertRaises(DatasetError):
            index.split('holdout')


class BatcherTestCase(DatasetTestCase):
    """Test mini-batch streams"""

    def setUp(self):
        super().setUp()
        self.index = self.synthetic(count=10, size=16)

    def test_batch_sizes(self):
        """Test that ten samples in batches of four give 4, 4, 2"""
        batcher = Batcher(self.index.pairs, batch_size=4, prefetch=0)
        sizes = [len(batch) for batch in batcher.epoch(0)]
        self.assertEqual(sizes, [4, 4, 2])
        self.assertEqual(len(batcher), 3)
        self.assertEqual(batch_slices(8, 4), [(0, 4), (4, 8)])

    def test_epoch_is_a_partition(self):
        """Test that one epoch visits every sample exactly once"""
        batcher = Batcher(self.index.pairs, batch_size=3, seed=1, prefetch=0)
        seen = [i for batch in batcher.epoch(0) for i in batch.indices]
        self.assertEqual(sorted(seen), list(range(10)))

    def test_order_depends_on_seed_and_epoch(self):
        """Test that seeds and epochs reorder deterministically"""
        def order(seed, epoch):
            batcher = Batcher(self.index.pairs, batch_size=10, seed=seed, prefetch=0)
            return [index for items in batcher.plan(epoch) for index, _ in items]

        self.assertEqual(order(1, 0), order(1, 0))
        self.assertNotEqual(order(1, 0), order(1, 1))
        self.assertNotEqual(order(1, 0), order(2, 0))

    def test_prefetch_does_not_change_batches(self):
        """Test that the prefetching worker yields exactly the inline batches"""
        with precision('float64'):
            inline = list(Batcher(self.index.pairs, 4, seed=5, augment=True, prefetch=0).epoch(2))
            prefetched = list(Batcher(self.index.pairs, 4, seed=5, augment=True, prefetch=2).epoch(2))
        self.assertEqual(len(inline), len(prefetched))
        for a, b in zip(inline, prefetched):
            self.assertEqual(a.indices, b.indices)
            self.assertEqual(a.images.dtype, np.float64)
            self.assertEqual(b.images.dtype, np.float64)
            np.testing.assert_array_equal(a.images, b.images)
            np.testing.assert_array_equal(a.masks, b.masks)

    def test_batch_arrays(self):
        """Test batch shapes and binary masks"""
        batch = next(iter(Batcher(self.index.pairs, 4, augment=True, prefetch=1)))
        self.assertEqual(batch.images.shape, (4, 3, 16, 16))
        self.assertEqual(batch.masks.shape, (4, 1, 16, 16))
        self.assertTrue(set(np.unique(batch.masks)) <= {0.0, 1.0})
        self.assertEqual(len(batch.names), 4)

    def test_worker_errors_surface(self):
        """Test that a decoding failure in the worker reaches the caller"""
        self.index.pairs[3][1].unlink()
        batcher = Batcher(self.index.pairs, 2, shuffle=False, prefetch=1)
        with self.assertRaises(DatasetError):
            list(batcher.epoch(0))

    def test_invalid_arguments(self):
        """Test empty pair lists and non-positive batch sizes"""
        with self.assertRaises(DatasetError):
            Batcher([], 4)
        with self.assertRaises(DatasetError):
            Batcher(self.index.pairs, 0)
