use rand::SeedableRng;
use vrgc::autodiff::relative_error;
use vrgc::graphio::Graph;
use vrgc::model::{Noise, Vrgc, VrgcConfig};
use vrgc::nn::ModelParams;
use vrgc::ordering::{encode_from_root, EncodedGraph};
use vrgc::seeds::StreamRng;

const H: f64 = 1e-4;
const FLOOR: f64 = 1e-6;

fn noise() -> Noise {
    Noise { dropout: StreamRng::seed_from_u64(21), eps: StreamRng::seed_from_u64(22) }
}

fn loss(model: &Vrgc, p: &ModelParams, batch: &[EncodedGraph], labels: &[usize]) -> f64 {
    model.forward(p, batch, Some(labels), true, &mut noise()).unwrap().out.loss_total
}

/// Worst relative error over every parameter scalar, using central differences.
fn worst_error(model: &Vrgc, p: &ModelParams, batch: &[EncodedGraph], labels: &[usize], h: f64, floor: f64) -> (f64, String) {
    let analytic = model.forward(p, batch, Some(labels), true, &mut noise()).unwrap().gradients().unwrap();
    let mut q = p.clone();
    let mut worst = (0.0, String::new());
    for (name, t) in &p.tensors {
        for i in 0..t.numel() {
            let x = t.data()[i];
            q.tensors.get_mut(name).unwrap().data_mut()[i] = x + h;
            let up = loss(model, &q, batch, labels);
            q.tensors.get_mut(name).unwrap().data_mut()[i] = x - h;
            let down = loss(model, &q, batch, labels);
            q.tensors.get_mut(name).unwrap().data_mut()[i] = x;
            let num = (up - down) / (2.0 * h);
            let e = relative_error(analytic[name].data()[i], num, floor);
            if e > worst.0 {
                worst = (e, format!("{name}[{i}]: analytic {} numeric {num}", analytic[name].data()[i]));
            }
        }
    }
    worst
}

fn toy_batch(d_n: usize) -> (Vec<EncodedGraph>, Vec<usize>) {
    let a = Graph::new(5, [(0, 1), (1, 2), (2, 3), (3, 4), (1, 4)], 1).unwrap();
    let b = Graph::new(4, [(0, 1), (0, 2), (0, 3)], 0).unwrap();
    let batch = vec![encode_from_root(&a, 2, d_n, 5).unwrap(), encode_from_root(&b, 1, d_n, 5).unwrap()];
    (batch, vec![1, 0])
}

#[test]
fn small_model_gradients_match_finite_differences() {
    let mut cfg = VrgcConfig::new(3, 5, 2);
    cfg.pre_embed_dim = 4;
    cfg.embed_hidden = 5;
    cfg.classifier_hidden = 6;
    cfg.head_hidden = 4;
    cfg.latent_dim = 2;
    cfg.decoder_hidden = 3;
    let model = Vrgc::new(cfg).unwrap();
    let p = model.init_params(&mut StreamRng::seed_from_u64(3)).unwrap();
    let (batch, labels) = toy_batch(3);
    let (e, at) = worst_error(&model, &p, &batch, &labels, H, FLOOR);
    assert!(e < 1e-4, "{e} at {at}");
}
