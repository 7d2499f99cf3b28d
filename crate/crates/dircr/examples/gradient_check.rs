//! Verify reverse-mode gradients against central differences for a few tape
//! expressions and for a full model forward + loss in f64.
//!
//! Usage: cargo run --release --example gradient_check

use ndarray::ArrayD;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dircr::model::{batch_images, classification_loss, Fwd, Model, ModelArch};
use dircr::puzzle::{generate_puzzle, PuzzleConfig};
use dircr::seed::rng_for;
use dircr::tensor::{gradcheck, CheckOpts, Tape, Tensor};

fn rand_arr(seed: u64, shape: &[usize], lo: f64, hi: f64) -> ArrayD<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ArrayD::from_shape_simple_fn(shape.to_vec(), || rng.gen_range(lo..hi))
}

fn check(
    name: &str,
    f: &dyn Fn(&Tape<f64>, &[Tensor<f64>]) -> Tensor<f64>,
    inputs: &[ArrayD<f64>],
    opts: &CheckOpts,
) {
    let report = gradcheck(f, inputs, opts);
    println!("{name:<26} {report}");
    assert!(report.pass, "{name} failed: {report}");
}

fn main() {
    let opts = CheckOpts::f64_defaults();

    // Branching and value reuse: softmax-weighted sum of squared errors.
    check(
        "softmax_weighted_mse",
        &|_, ts| {
            let w = ts[0].softmax_last();
            let err = ts[1].sub(&ts[2]);
            w.mul(&err.mul(&err)).sum_all()
        },
        &[
            rand_arr(1, &[3, 4], -1.0, 1.0),
            rand_arr(2, &[3, 4], -1.0, 1.0),
            rand_arr(3, &[3, 4], -1.0, 1.0),
        ],
        &opts,
    );

    check(
        "gelu_matmul_chain",
        &|_, ts| ts[0].matmul(&ts[1]).gelu().matmul(&ts[2]).sum_all(),
        &[
            rand_arr(4, &[3, 5], -1.0, 1.0),
            rand_arr(5, &[5, 4], -1.0, 1.0),
            rand_arr(6, &[4, 2], -1.0, 1.0),
        ],
        &opts,
    );

    // Whole pipeline: perturb one weight matrix of a tiny model and compare
    // the cross-entropy gradient flowing back through scoring head, DIRM
    // stack, and encoder.
    let arch = ModelArch {
        image_size: 16,
        channels: 4,
        n_blocks: 2,
        n_heads: 2,
        attn_dim: 4,
        k: 1,
        dropout: 0.0,
        use_local: true,
        use_global: true,
        use_rclm: false,
        proj_dim: 8,
    };
    let model = Model::<f64>::new(arch, 0).unwrap();
    let cfg = PuzzleConfig { image_size: 16, ..PuzzleConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = generate_puzzle(&mut rng, &cfg).unwrap();
    let images = batch_images::<f64>(&[&p]);
    let answers = [p.answer_index as usize];

    for pname in ["head.fc1.w", "dirm0.refold.w", "encoder.block0.conv1.w"] {
        let pid = match model.params.id_of(pname) {
            Some(id) => id,
            None => {
                println!("{pname:<26} (not present in this arch)");
                continue;
            }
        };
        let start = model.params.value(pid).to_owned();
        check(
            pname,
            &|tape, ts| {
                let mut stats = model.stats.clone();
                let mut fw =
                    Fwd::new(tape, &model.params, &mut stats, false, true, rng_for(0, "eval", &[]));
                fw.preload(pid, ts[0].clone());
                let out = model.forward(&mut fw, &images).unwrap();
                classification_loss(&out.logits, &answers).unwrap()
            },
            &[start],
            &CheckOpts { max_entries: 40, ..CheckOpts::f64_defaults() },
        );
    }
}
