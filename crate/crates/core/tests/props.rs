//! Property tests for the pooling invariants, file-format round trips, and
//! patch geometry.

use proptest::prelude::*;

use spd_restore::data::{crop_patches, GrayImage, PgmDepth};
use spd_restore::semantic::SegmentationMap;
use spd_restore::tensor::io::{read_tensor, tensor_to_bytes};
use spd_restore::tensor::{Graph, Shape, Tensor};

fn small_tensor() -> impl Strategy<Value = Tensor<f64>> {
    (1usize..3, 1usize..3, 2usize..6, 2usize..6)
        .prop_flat_map(|(b, c, h, w)| {
            let shape = Shape::new(b, c, h, w);
            proptest::collection::vec(-10.0f64..10.0, shape.len())
                .prop_map(move |data| Tensor::new(shape, data).unwrap())
        })
}

fn labels_for(h: usize, w: usize) -> impl Strategy<Value = Vec<u8>> {
    proptest::collection::vec(0u8..4, h * w)
}

fn pool(t: &Tensor<f64>, map: &SegmentationMap) -> Tensor<f64> {
    let maps: Vec<SegmentationMap> = (0..t.shape().batch).map(|_| map.clone()).collect();
    let mut g = Graph::new();
    let v = g.leaf(t.clone(), false);
    let pooled = spd_restore::semantic::map_pool(&mut g, v, &maps).unwrap();
    g.value(pooled).clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn map_pool_is_idempotent_affine_and_label_invariant(
        t in small_tensor(),
        raw in labels_for(8, 8),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let shape = t.shape();
        let labels: Vec<u8> = raw.iter().take(shape.plane()).copied().collect();
        let map = SegmentationMap::new(shape.height, shape.width, labels).unwrap();

        // idempotence: pooling a pooled tensor changes nothing
        let once = pool(&t, &map);
        let twice = pool(&once, &map);
        prop_assert_eq!(&once, &twice);

        // affine equivariance: pool(a*t + b) == a*pool(t) + b
        let affine_in = t.map(|v| a * v + b);
        let lhs = pool(&affine_in, &map);
        let rhs = once.map(|v| a * v + b);
        prop_assert!(lhs.approx_eq(&rhs, 1e-6));

        // relabeling invariance
        let k = map.k();
        let perm: Vec<u8> = (0..k as u8).rev().collect();
        let permuted = map.permute_labels(&perm).unwrap();
        prop_assert_eq!(once, pool(&t, &permuted));
    }

    #[test]
    fn spdt_round_trip_is_bit_exact(t in small_tensor()) {
        let t32 = t.cast::<f32>();
        let bytes = tensor_to_bytes(&t32);
        let mut cursor = bytes.as_slice();
        let back = read_tensor(&mut cursor, std::path::Path::new("prop.spdt")).unwrap();
        prop_assert_eq!(t32, back);
        prop_assert!(cursor.is_empty());
    }

    #[test]
    fn pgm_round_trip_preserves_quantized_levels(
        h in 2usize..10,
        w in 2usize..10,
        seed in 0u16..500,
    ) {
        let img = GrayImage::from_fn(h, w, |y, x| {
            (((y * w + x) as u32 * 37 + u32::from(seed)) % 256) as f32 / 255.0
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.pgm");
        img.write_pgm(&path, PgmDepth::Eight).unwrap();
        let back = GrayImage::read_pgm(&path).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            prop_assert!((a - b).abs() < 1.0 / 510.0);
        }
        // writing the re-read image again is byte-identical
        let path2 = dir.path().join("p2.pgm");
        back.write_pgm(&path2, PgmDepth::Eight).unwrap();
        prop_assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn patches_stay_inside_and_disjoint(
        h in 8usize..40,
        w in 8usize..40,
        size in 4usize..12,
        extra in 0usize..6,
    ) {
        prop_assume!(size <= h && size <= w);
        let step = size + extra;
        let img = GrayImage::from_fn(h, w, |y, x| ((y * w + x) % 97) as f32 / 96.0);
        let grid = crop_patches(&img, size, step).unwrap();
        prop_assert!(!grid.patches.is_empty());
        let mut seen = std::collections::HashSet::new();
        for p in &grid.patches {
            prop_assert!(p.row + size <= h && p.col + size <= w);
            prop_assert_eq!(p.row % step, 0);
            prop_assert_eq!(p.col % step, 0);
            for y in 0..size {
                for x in 0..size {
                    prop_assert!(seen.insert((p.row + y, p.col + x)));
                }
            }
        }
    }

    #[test]
    fn mask_pgm_round_trip_is_exact(raw in labels_for(6, 6)) {
        let map = SegmentationMap::new(6, 6, raw).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        map.write_pgm(&path).unwrap();
        let back = SegmentationMap::read_pgm(&path, 8).unwrap();
        prop_assert_eq!(map, back);
    }
}
