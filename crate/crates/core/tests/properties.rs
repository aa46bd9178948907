use chrono::{DateTime, Duration, Utc};
use petgan::data::{
    build_manifest, denormalize, filter_records, normalize, square_crop_rect, BBox, ManifestConfig, RawImageRecord, Species,
};
use petgan::engagement::{NewPost, SnapshotRecord, Store};
use petgan::gan::{
    discriminator_loss, orthogonal_regularization, truncated_sample, value_function, Generator, GeneratorSpec, Mode,
};
use petgan::metrics::{
    classify_popularity, compute_ies, compute_p_ies, inception_score, Popularity, PostEngagement, Verdict,
};
use petgan::tensor::{conv_output_extent, grad_check, Activation, Tape, Tensor};
use petgan::train::SampleProvenance;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn simplex_rows(max_rows: usize, max_classes: usize) -> impl Strategy<Value = (Vec<f64>, usize)> {
    (2..=max_classes).prop_flat_map(move |c| {
        prop::collection::vec(prop::collection::vec(0.0f64..1.0, c), 1..=max_rows).prop_map(move |rows| {
            let mut out = Vec::with_capacity(rows.len() * c);
            for row in rows {
                let s: f64 = row.iter().sum::<f64>() + 1e-3;
                out.extend(row.iter().map(|v| (v + 1e-3 / c as f64) / s));
            }
            (out, c)
        })
    })
}

fn records() -> impl Strategy<Value = Vec<RawImageRecord>> {
    prop::collection::vec((64u32..600, 64u32..600, any::<bool>(), any::<bool>()), 1..30).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (w, h, cat, human))| RawImageRecord {
                path: format!("img-{i:03}.png").into(),
                width: w,
                height: h,
                species: if cat { Species::Cat } else { Species::Dog },
                bbox: None,
                contains_human: human && i % 3 == 0,
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_transpose_is_adjoint(
        seed in any::<u64>(),
        n in 1usize..3, c_in in 1usize..4, c_out in 1usize..4,
        k in 1usize..5, stride in 1usize..4, pad in 0usize..3,
        h in 1usize..12, w in 1usize..12,
    ) {
        let (Some(oh), Some(ow)) = (conv_output_extent(h, k, stride, pad), conv_output_extent(w, k, stride, pad)) else {
            return Ok(());
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::randn([n, c_in, h, w], 1.0, &mut rng);
        let kern = Tensor::randn([c_out, c_in, k, k], 1.0, &mut rng);
        let y = Tensor::randn([n, c_out, oh, ow], 1.0, &mut rng);
        let mut tape = Tape::new();
        let (xv, kv, yv) = (tape.constant(&x), tape.constant(&kern), tape.constant(&y));
        let ax = tape.conv2d(xv, kv, stride, pad).unwrap();
        let aty = tape.conv_transpose2d(yv, kv, stride, pad).unwrap();
        let lhs = tape.tensor(ax).dot(&y).unwrap();
        let rhs = x.dot(&tape.tensor(aty)).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1e-300));
    }

    #[test]
    fn forward_values_are_deterministic(seed in any::<u64>()) {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::randn([2, 2, 6, 6], 1.0, &mut rng);
            let k = Tensor::randn([3, 2, 4, 4], 1.0, &mut rng);
            let mut tape = Tape::new();
            let (xv, kv) = (tape.constant(&x), tape.constant(&k));
            let y = tape.conv2d(xv, kv, 2, 1).unwrap();
            let y = tape.activation(y, Activation::Tanh).unwrap();
            tape.tensor(y)
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn value_function_is_negated_discriminator_loss(
        real in prop::collection::vec(0.0f64..=1.0, 1..20),
        fake in prop::collection::vec(0.0f64..=1.0, 1..20),
    ) {
        prop_assert_eq!(value_function(&real, &fake).unwrap(), -discriminator_loss(&real, &fake).unwrap());
    }

    #[test]
    fn ortho_penalty_is_linear_in_beta_and_rotation_invariant(
        rows in 2usize..6, cols in 1usize..5, seed in any::<u64>(), beta in 0.0f64..10.0,
        angles in prop::collection::vec(0.0f64..std::f64::consts::TAU, 1..6),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Tensor::randn([rows, cols], 1.0, &mut rng);
        let r1 = orthogonal_regularization(&w, 1.0).unwrap();
        prop_assert_eq!(orthogonal_regularization(&w, beta).unwrap(), beta * r1);

        // left-multiply by a product of Givens rotations
        let mut q = w.data().to_vec();
        for (t, a) in angles.iter().enumerate() {
            let (i, j) = (t % rows, (t + 1) % rows);
            let (c, s) = (a.cos(), a.sin());
            for col in 0..cols {
                let (u, v) = (q[i * cols + col], q[j * cols + col]);
                q[i * cols + col] = c * u - s * v;
                q[j * cols + col] = s * u + c * v;
            }
        }
        let rotated = orthogonal_regularization(&Tensor::new([rows, cols], q).unwrap(), 1.0).unwrap();
        prop_assert!((rotated - r1).abs() <= 1e-10 * r1.max(1.0));
    }

    #[test]
    fn filtering_is_monotone(recs in records(), lo in 64u32..400, bump in 0u32..200) {
        let a = filter_records(&recs, lo, true);
        let b = filter_records(&recs, lo + bump, true);
        prop_assert!(b.kept.iter().all(|r| a.kept.contains(r)));
        prop_assert_eq!(a.kept.len() + a.rejections.len(), recs.len());
    }

    #[test]
    fn crops_are_square_and_inside(w in 1u32..2000, h in 1u32..2000, bx in 0u32..2000, by in 0u32..2000, bw in 1u32..2000, bh in 1u32..2000, with_box in any::<bool>()) {
        let bbox = BBox { x: bx % w, y: by % h, w: bw.min(w - bx % w), h: bh.min(h - by % h) };
        let r = square_crop_rect(w, h, with_box.then_some(bbox));
        prop_assert!(r.side >= 1 && r.side <= w.min(h));
        prop_assert!(r.x + r.side <= w && r.y + r.side <= h);
        if with_box {
            prop_assert_eq!(r.side, bbox.w.max(bbox.h).min(w.min(h)));
        }
    }

    #[test]
    fn augmentation_doubles_and_keeps_species_counts(recs in records()) {
        let base = ManifestConfig { min_resolution: 64, drop_humans: false, augment: false, ..ManifestConfig::default() };
        let plain = build_manifest(&recs, base).unwrap().manifest;
        let aug = build_manifest(&recs, ManifestConfig { augment: true, ..base }).unwrap().manifest;
        prop_assert_eq!(aug.len(), 2 * plain.len());
        prop_assert_eq!(aug.counts.dog, 2 * plain.counts.dog);
        prop_assert_eq!(aug.counts.cat, 2 * plain.counts.cat);
        prop_assert_eq!(build_manifest(&recs, base).unwrap().manifest.checksum, plain.checksum);
    }

    #[test]
    fn normalize_round_trips(v in any::<u8>()) {
        let x = normalize(v);
        prop_assert!((-1.0..=1.0).contains(&x));
        prop_assert!(((x + 1.0) * 127.5 - v as f64).abs() <= 1.0 / 255.0);
        prop_assert_eq!(denormalize(x), v);
    }

    #[test]
    fn inception_score_bounds((probs, c) in simplex_rows(12, 6)) {
        let is = inception_score(&probs, c, 1).unwrap();
        prop_assert!(is.mean >= 1.0 && is.mean <= c as f64, "{}", is.mean);
    }

    #[test]
    fn inception_score_permutation_invariant((probs, c) in simplex_rows(10, 5), shift in 0usize..10, col_shift in 1usize..5) {
        let n = probs.len() / c;
        let base = inception_score(&probs, c, 1).unwrap().mean;
        let rows: Vec<f64> = (0..n).flat_map(|i| probs[((i + shift) % n) * c..][..c].to_vec()).collect();
        let cols: Vec<f64> = (0..n).flat_map(|i| (0..c).map(|j| probs[i * c + (j + col_shift) % c]).collect::<Vec<_>>()).collect();
        prop_assert!((inception_score(&rows, c, 1).unwrap().mean - base).abs() < 1e-12);
        prop_assert!((inception_score(&cols, c, 1).unwrap().mean - base).abs() < 1e-12);
    }

    #[test]
    fn ies_is_homogeneous(likes in 0u64..100_000, comments in 0u64..10_000, followers in 1u64..1_000_000, s in 1u64..1000) {
        let a = compute_ies(likes, comments, followers).unwrap();
        let b = compute_ies(likes * s, comments * s, followers * s).unwrap();
        prop_assert!((a - b).abs() <= 1e-15 * a.max(1.0));
    }

    #[test]
    fn p_ies_with_k1_is_latest_post(posts in prop::collection::vec((0i64..1000, 0u64..500, 0u64..50), 1..15), followers in 1u64..10_000) {
        let t0: DateTime<Utc> = "2021-01-01T00:00:00Z".parse().unwrap();
        let posts: Vec<PostEngagement> = posts
            .iter()
            .enumerate()
            .map(|(i, (h, l, c))| PostEngagement {
                post_id: format!("p{i:02}"),
                posted_at: t0 + Duration::hours(*h),
                relevant: true,
                likes: *l,
                comments: *c,
            })
            .collect();
        let latest = posts.iter().max_by(|a, b| a.posted_at.cmp(&b.posted_at).then_with(|| a.post_id.cmp(&b.post_id))).unwrap();
        let p = compute_p_ies(&posts, followers, 1).unwrap();
        prop_assert_eq!(p.value, compute_ies(latest.likes, latest.comments, followers).unwrap());
    }

    #[test]
    fn popularity_is_monotone(a in any::<u64>(), b in any::<u64>()) {
        let rank = |p| match p {
            Popularity::Low => 0,
            Popularity::Medium => 1,
            Popularity::High => 2,
        };
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(rank(classify_popularity(lo)) <= rank(classify_popularity(hi)));
    }

    #[test]
    fn truncated_entries_stay_inside(tau in 0.05f64..3.0, seed in any::<u64>()) {
        let z = truncated_sample(16, 8, Some(tau), seed).unwrap();
        prop_assert!(z.values.iter().all(|v| v.abs() <= tau));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn composed_ops_pass_gradient_check(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![
            Tensor::randn([2, 2, 4, 4], 1.0, &mut rng),
            Tensor::randn([3, 2, 2, 2], 0.7, &mut rng),
            Tensor::randn([3], 1.0, &mut rng),
            Tensor::randn([3], 1.0, &mut rng),
        ];
        let weights = Tensor::randn([2, 3, 2, 2], 1.0, &mut rng);
        let err = grad_check(&mut params, 1e-6, |t, v| {
            let y = t.conv2d(v[0], v[1], 2, 0)?;
            let (y, _) = t.batch_norm2d(y, v[2], v[3], 1e-5)?;
            let y = t.activation(y, Activation::Sigmoid)?;
            let w = t.constant(&weights);
            let y = t.mul(y, w)?;
            let y = t.spatial_mean(y)?;
            let y = t.mul(y, y)?;
            Ok(t.sum(y))
        })
        .unwrap();
        prop_assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn generator_output_stays_in_range(seed in any::<u64>(), scale in 0.1f64..50.0) {
        let spec = GeneratorSpec { latent_dim: 6, base_channels: 2, output_resolution: 32 };
        let mut g = Generator::build(spec, seed).unwrap();
        for p in g.network_mut().params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
        let z = truncated_sample(3, 6, None, seed).unwrap();
        for mode in [Mode::Train, Mode::Eval] {
            let y = g.generate(&z, mode).unwrap();
            prop_assert!(y.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn journal_replay_reproduces_state(ops in prop::collection::vec((0u8..4, any::<u16>(), any::<u16>()), 1..80)) {
        let dir = tempfile::tempdir().unwrap();
        let t0: DateTime<Utc> = "2021-03-01T00:00:00Z".parse().unwrap();
        let mut store = Store::open(dir.path()).unwrap();
        let mut ids: Vec<String> = Vec::new();
        for (n, (op, a, b)) in ops.into_iter().enumerate() {
            let at = t0 + Duration::seconds(n as i64);
            match op {
                0 => {
                    let prov = SampleProvenance { index: n, checkpoint_id: "p".into(), tau: None, seed: 0 };
                    let (r, _) = store.register_sample(&[(a % 7) as u8], &prov, at).unwrap();
                    if !ids.contains(&r.id) {
                        ids.push(r.id);
                    }
                }
                1 if !ids.is_empty() => {
                    let v = if b % 2 == 0 { Verdict::Fit } else { Verdict::Unfit };
                    store.record_verdict(&ids[a as usize % ids.len()], v, "", at).unwrap();
                }
                2 if !ids.is_empty() => {
                    let _ = store.create_post(
                        NewPost {
                            post_id: Some(format!("p{}", b % 5)),
                            sample_id: ids[a as usize % ids.len()].clone(),
                            page: None,
                            posted_at: t0,
                            relevant: true,
                            caption: String::new(),
                        },
                        at,
                    );
                }
                3 => {
                    let _ = store.record_snapshot(
                        SnapshotRecord {
                            post_id: format!("p{}", b % 5),
                            observed_at: t0 + Duration::minutes(a as i64 % 50),
                            likes: a as u64,
                            comments: b as u64 % 10,
                            followers: 1 + b as u64,
                        },
                        at,
                    );
                }
                _ => {}
            }
        }
        let posts = store.posts().unwrap();
        prop_assert!(posts.iter().all(|p| store.sample(&p.sample_id).is_some_and(|s| s.status != petgan::engagement::SampleStatus::Pending)));
        let replayed = Store::open(dir.path()).unwrap();
        prop_assert!(replayed.state() == store.state());
    }
}
