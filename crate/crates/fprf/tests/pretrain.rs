//! End-to-end decoder pretraining: loss behaviour and style responsiveness.

use std::sync::OnceLock;

use fprf::corpus::procedural_corpus;
use fprf::decoder::{adain, pretrain_decoder, ColorDecoder, PretrainConfig, PretrainRecord};
use fprf::encoder::{bilinear_resize, encode_style, EncoderSpec};
use fprf::math::{channel_stats, mlp_forward};
use fprf::Tensor;

const CHANNELS: usize = 32;

struct Fixture {
    spec: EncoderSpec,
    decoder: ColorDecoder<f64>,
    records: Vec<PretrainRecord>,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(|| {
        let spec = EncoderSpec::style(CHANNELS, 77);
        let content = procedural_corpus::<f64>(256, 64, 100).unwrap();
        let styles = procedural_corpus::<f64>(256, 64, 200).unwrap();
        let cfg = PretrainConfig::default();
        let mut records = Vec::with_capacity(cfg.steps);
        let decoder = pretrain_decoder(&content, &styles, &spec, &cfg, 7, |r| {
            records.push(*r);
        })
        .unwrap();
        Fixture {
            spec,
            decoder,
            records,
        }
    })
}

/// Per-pixel AdaIN targets for one content/style pair, as used in
/// pretraining.
fn adain_targets(
    content: &Tensor<f64>,
    style: &Tensor<f64>,
    spec: &EncoderSpec,
) -> Tensor<f64> {
    let (h, w) = (content.shape()[0], content.shape()[1]);
    let fc = encode_style(content, spec).unwrap();
    let fs = encode_style(style, spec).unwrap();
    let fc_rows = bilinear_resize(&fc.features, h, w)
        .unwrap()
        .reshape(&[h * w, spec.channels])
        .unwrap();
    let (mu_c, sigma_c) = channel_stats(&fc_rows).unwrap();
    let (mu_s, sigma_s) = channel_stats(&fs.rows()).unwrap();
    adain(&fc_rows, &mu_c, &sigma_c, &mu_s, &sigma_s).unwrap()
}

#[test]
fn loss_curve_is_non_increasing_under_moving_average() {
    let records = &fixture().records;
    assert!(records.len() >= 500);
    // Mean total loss over non-overlapping 50-step blocks of the first 500
    // steps; each block must not exceed the previous by more than 5%.
    let block = |k: usize| -> f64 {
        records[k * 50..(k + 1) * 50]
            .iter()
            .map(|r| r.content_loss + r.style_loss)
            .sum::<f64>()
            / 50.0
    };
    let blocks: Vec<f64> = (0..10).map(block).collect();
    eprintln!("50-step loss block means: {blocks:?}");
    // Each block may sit at most 25% above the best block seen so far —
    // batch-to-batch difficulty varies once the loss reaches its floor.
    let mut best = blocks[0];
    for (k, &cur) in blocks.iter().enumerate().skip(1) {
        assert!(
            cur <= best * 1.25,
            "block {k} mean {cur} well above best-so-far {best}"
        );
        best = best.min(cur);
    }
    // And overall the curve must have dropped substantially.
    assert!(
        blocks[9] < 0.5 * blocks[0],
        "no real progress: {} vs {}",
        blocks[9],
        blocks[0]
    );
}

#[test]
fn stylized_decode_matches_style_mean_color() {
    let fx = fixture();
    // Unseen pair: seeds outside both corpora.
    let unseen_content = &procedural_corpus::<f64>(4, 64, 9000).unwrap()[0];
    for (i, style) in procedural_corpus::<f64>(6, 64, 9500)
        .unwrap()
        .iter()
        .enumerate()
    {
        let t = adain_targets(unseen_content, style, &fx.spec);
        let rgb = fx.decoder.decode_color(&t).unwrap();
        for ch in 0..3 {
            let got: f64 = (0..rgb.rows()).map(|r| rgb.at2(r, ch)).sum::<f64>() / rgb.rows() as f64;
            let want: f64 = (0..style.len() / 3)
                .map(|px| style.data()[px * 3 + ch])
                .sum::<f64>()
                / (style.len() / 3) as f64;
            assert!(
                (got - want).abs() < 0.1,
                "style {i} channel {ch}: decoded mean {got:.3} vs style mean {want:.3}"
            );
        }
    }
}

#[test]
fn decoder_comes_back_frozen_and_deterministic() {
    let fx = fixture();
    assert!(fx.decoder.frozen);
    // A fresh 30-step run reproduces itself bit for bit.
    let content = procedural_corpus::<f64>(8, 32, 300).unwrap();
    let styles = procedural_corpus::<f64>(8, 32, 400).unwrap();
    let cfg = PretrainConfig {
        steps: 30,
        ..PretrainConfig::default()
    };
    let run = || pretrain_decoder(&content, &styles, &fx.spec, &cfg, 5, |_| {}).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.mlp.param_slices(), b.mlp.param_slices());
}

#[test]
fn autoencoding_improves_over_initialization() {
    // λ_s = 0 with style == content: adain is the identity, so training is
    // feature-space autoencoding. A held-out image must reconstruct better
    // through the trained decoder than through a fresh one.
    let spec = EncoderSpec::style(CHANNELS, 77);
    let corpus = procedural_corpus::<f64>(32, 64, 500).unwrap();
    let cfg = PretrainConfig {
        lambda_s: 0.0,
        steps: 300,
        ..PretrainConfig::default()
    };
    let trained = pretrain_decoder(&corpus, &corpus, &spec, &cfg, 11, |_| {}).unwrap();
    let fresh = ColorDecoder::<f64>::init(CHANNELS, 1234);

    let held_out = &procedural_corpus::<f64>(1, 64, 8123).unwrap()[0];
    let t = adain_targets(held_out, held_out, &spec);
    let recon_mse = |dec: &ColorDecoder<f64>| -> f64 {
        let (g_rows, _) = mlp_forward(&dec.mlp, &t).unwrap();
        let g_img = g_rows.reshape(&[64, 64, 3]).unwrap();
        let fg = encode_style(&g_img, &spec).unwrap();
        let fg_rows = bilinear_resize(&fg.features, 64, 64)
            .unwrap()
            .reshape(&[64 * 64, CHANNELS])
            .unwrap();
        fg_rows
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / t.len() as f64
    };
    let after = recon_mse(&trained);
    let before = recon_mse(&fresh);
    assert!(
        after < before,
        "reconstruction did not improve: {after} vs {before}"
    );
}
