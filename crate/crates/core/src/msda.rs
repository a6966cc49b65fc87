//! Mixed-sample augmentation kernels.
//!
//! Every kernel first samples a [`MixPlan`] and then applies it with
//! [`apply_plan`], so a logged plan replays the kernel output bit-exactly.
//! Kernels take the per-step stream by reference and derive their own
//! purpose streams (`LAMBDA`, `PAIRING`, `BOX`) from it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{beta_sample, keys, RngStream};
use crate::tensor::{LabeledBatch, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    None,
    Mixup,
    Cutmix,
    SaliencyGrid,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Method::None),
            "mixup" => Ok(Method::Mixup),
            "cutmix" => Ok(Method::Cutmix),
            "saliency_grid" => Ok(Method::SaliencyGrid),
            other => Err(Error::Parameter(format!("unknown mixing method {other:?}"))),
        }
    }
}

/// Channel-major image layout of a feature row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        ImageShape {
            channels,
            height,
            width,
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.channels * self.pixels()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `[1, s, s]` for square feature counts, `[3, s, s]` when `n / 3` is square.
    pub fn infer(n_features: usize) -> Option<ImageShape> {
        let sq = |n: usize| {
            let s = (n as f64).sqrt().round() as usize;
            (s * s == n && s >= 2).then_some(s)
        };
        if let Some(s) = sq(n_features) {
            return Some(ImageShape::new(1, s, s));
        }
        if n_features.is_multiple_of(3) {
            if let Some(s) = sq(n_features / 3) {
                return Some(ImageShape::new(3, s, s));
            }
        }
        None
    }

    fn check(&self, batch: &LabeledBatch) -> Result<()> {
        if self.height < 2 || self.width < 2 {
            return Err(Error::Shape(format!("image {self:?} must be at least 2x2")));
        }
        if batch.features.row_len() != self.len() {
            return Err(Error::Shape(format!(
                "feature rows of length {} do not reshape to {self:?}",
                batch.features.row_len()
            )));
        }
        Ok(())
    }
}

/// Rectangle in pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutBox {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl CutBox {
    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x0 + self.w && y >= self.y0 && y < self.y0 + self.h
    }
}

/// Replayable description of one batch's augmentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixPlan {
    pub method: Method,
    pub lambda_raw: f64,
    /// Label weight of the primary sample actually applied.
    pub lambda_effective: f64,
    pub pairing: Vec<usize>,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub cut_box: Option<CutBox>,
    /// Per sample, row-major `grid x grid` flags; `true` keeps the primary cell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_assignment: Option<Vec<Vec<bool>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageShape>,
    /// Sample-granularity drop decisions; `true` means the sample was left unmixed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kept_original: Option<Vec<bool>>,
}

impl MixPlan {
    pub fn identity(batch_size: usize) -> Self {
        MixPlan {
            method: Method::None,
            lambda_raw: 1.0,
            lambda_effective: 1.0,
            pairing: (0..batch_size).collect(),
            cut_box: None,
            cell_assignment: None,
            grid: None,
            image: None,
            kept_original: None,
        }
    }

    pub fn mixup(lambda: f64, pairing: Vec<usize>) -> Self {
        MixPlan {
            method: Method::Mixup,
            lambda_raw: lambda,
            lambda_effective: lambda,
            pairing,
            ..MixPlan::identity(0)
        }
    }

    /// One line of JSON for experiment logs.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }

    pub fn validate(&self, batch_size: usize) -> Result<()> {
        if self.pairing.len() != batch_size {
            return Err(Error::Validation(format!(
                "pairing has {} entries for a batch of {batch_size}",
                self.pairing.len()
            )));
        }
        let mut seen = vec![false; batch_size];
        for &p in &self.pairing {
            if p >= batch_size || std::mem::replace(&mut seen[p], true) {
                return Err(Error::Validation("pairing is not a permutation".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda_effective) {
            return Err(Error::Validation(format!(
                "lambda_effective {} outside [0, 1]",
                self.lambda_effective
            )));
        }
        if self.method == Method::None
            && (self.lambda_effective != 1.0 || self.pairing.iter().enumerate().any(|(i, &p)| i != p))
        {
            return Err(Error::Validation("unmixed plan must be the identity".into()));
        }
        Ok(())
    }
}

fn mix_labels(batch: &LabeledBatch, plan: &MixPlan) -> Result<Tensor> {
    let partner = batch.labels.select_rows(&plan.pairing);
    Tensor::lerp(&batch.labels, &partner, plan.lambda_effective)
}

/// Applies a plan to a batch. Deterministic: no randomness is consumed.
pub fn apply_plan(batch: &LabeledBatch, plan: &MixPlan) -> Result<LabeledBatch> {
    plan.validate(batch.len())?;
    let mut out = match plan.method {
        Method::None => batch.clone(),
        Method::Mixup => {
            let partner = batch.features.select_rows(&plan.pairing);
            LabeledBatch {
                features: Tensor::lerp(&batch.features, &partner, plan.lambda_effective)?,
                labels: mix_labels(batch, plan)?,
            }
        }
        Method::Cutmix => {
            let img = plan
                .image
                .ok_or_else(|| Error::Validation("cutmix plan without image shape".into()))?;
            img.check(batch)?;
            let cut = plan
                .cut_box
                .ok_or_else(|| Error::Validation("cutmix plan without box".into()))?;
            let mut features = batch.features.clone();
            if cut.area() > 0 {
                for (i, &j) in plan.pairing.iter().enumerate() {
                    let src = batch.features.row(j);
                    let dst = features.row_mut(i);
                    for c in 0..img.channels {
                        for y in cut.y0..cut.y0 + cut.h {
                            let off = c * img.pixels() + y * img.width;
                            dst[off + cut.x0..off + cut.x0 + cut.w]
                                .copy_from_slice(&src[off + cut.x0..off + cut.x0 + cut.w]);
                        }
                    }
                }
            }
            LabeledBatch {
                features,
                labels: mix_labels(batch, plan)?,
            }
        }
        Method::SaliencyGrid => {
            let img = plan
                .image
                .ok_or_else(|| Error::Validation("grid plan without image shape".into()))?;
            img.check(batch)?;
            let g = plan
                .grid
                .ok_or_else(|| Error::Validation("grid plan without grid size".into()))?;
            let cells = plan
                .cell_assignment
                .as_ref()
                .ok_or_else(|| Error::Validation("grid plan without cell assignment".into()))?;
            if cells.len() != batch.len() || cells.iter().any(|c| c.len() != g * g) {
                return Err(Error::Validation("cell assignment does not match batch".into()));
            }
            let (ch, cw) = (img.height / g, img.width / g);
            let mut features = batch.features.clone();
            for (i, &j) in plan.pairing.iter().enumerate() {
                let src = batch.features.row(j);
                let dst = features.row_mut(i);
                for (cell, &keep) in cells[i].iter().enumerate() {
                    if keep {
                        continue;
                    }
                    let (gy, gx) = (cell / g, cell % g);
                    for c in 0..img.channels {
                        for y in gy * ch..(gy + 1) * ch {
                            let off = c * img.pixels() + y * img.width + gx * cw;
                            dst[off..off + cw].copy_from_slice(&src[off..off + cw]);
                        }
                    }
                }
            }
            LabeledBatch {
                features,
                labels: mix_labels(batch, plan)?,
            }
        }
    };
    if let Some(kept) = &plan.kept_original {
        if kept.len() != batch.len() {
            return Err(Error::Validation("drop mask does not match batch".into()));
        }
        for (i, _) in kept.iter().enumerate().filter(|(_, &k)| k) {
            out.features.row_mut(i).copy_from_slice(batch.features.row(i));
            out.labels.row_mut(i).copy_from_slice(batch.labels.row(i));
        }
    }
    Ok(out)
}

fn require_pairs(batch: &LabeledBatch) -> Result<()> {
    if batch.len() < 2 {
        return Err(Error::Size(format!("mixing needs at least 2 samples, got {}", batch.len())));
    }
    Ok(())
}

fn draw_lambda(stream: &RngStream, alpha: f64) -> Result<f64> {
    beta_sample(&mut stream.derive(keys::LAMBDA, 0), alpha)
}

fn draw_pairing(stream: &RngStream, n: usize) -> Vec<usize> {
    stream.derive(keys::PAIRING, 0).permutation(n)
}

pub fn mixup(batch: &LabeledBatch, alpha: f64, stream: &RngStream) -> Result<(LabeledBatch, MixPlan)> {
    require_pairs(batch)?;
    let lambda = draw_lambda(stream, alpha)?;
    let plan = MixPlan::mixup(lambda, draw_pairing(stream, batch.len()));
    Ok((apply_plan(batch, &plan)?, plan))
}

/// Box of `floor(W sqrt(1 - lambda)) x floor(H sqrt(1 - lambda))` centered at
/// `(cx, cy)`, clipped to the image.
pub fn cutmix_box(img: ImageShape, lambda: f64, cx: usize, cy: usize) -> CutBox {
    let ratio = (1.0 - lambda).sqrt();
    let cut_w = (img.width as f64 * ratio).floor() as i64;
    let cut_h = (img.height as f64 * ratio).floor() as i64;
    let clip = |v: i64, hi: usize| v.clamp(0, hi as i64) as usize;
    let x0 = cx as i64 - cut_w / 2;
    let y0 = cy as i64 - cut_h / 2;
    let (x1, y1) = (clip(x0 + cut_w, img.width), clip(y0 + cut_h, img.height));
    let (x0, y0) = (clip(x0, img.width), clip(y0, img.height));
    CutBox {
        x0,
        y0,
        w: x1 - x0,
        h: y1 - y0,
    }
}

/// Label weight left to the primary image after pasting `cut`.
pub fn cutmix_lambda_effective(img: ImageShape, cut: CutBox) -> f64 {
    1.0 - cut.area() as f64 / img.pixels() as f64
}

pub(crate) fn sample_cutmix_plan(
    img: ImageShape,
    batch_size: usize,
    alpha: f64,
    stream: &RngStream,
) -> Result<MixPlan> {
    let lambda = draw_lambda(stream, alpha)?;
    let mut s = stream.derive(keys::BOX, 0);
    let cx = s.below(img.width);
    let cy = s.below(img.height);
    let cut = cutmix_box(img, lambda, cx, cy);
    Ok(MixPlan {
        method: Method::Cutmix,
        lambda_raw: lambda,
        lambda_effective: cutmix_lambda_effective(img, cut),
        pairing: draw_pairing(stream, batch_size),
        cut_box: Some(cut),
        image: Some(img),
        ..MixPlan::identity(0)
    })
}

pub fn cutmix(
    batch: &LabeledBatch,
    img: ImageShape,
    alpha: f64,
    stream: &RngStream,
) -> Result<(LabeledBatch, MixPlan)> {
    require_pairs(batch)?;
    img.check(batch)?;
    let plan = sample_cutmix_plan(img, batch.len(), alpha, stream)?;
    Ok((apply_plan(batch, &plan)?, plan))
}

/// Source of per-image saliency maps, shape `[batch, height, width]`.
pub trait SaliencyProvider {
    fn saliency(&self, batch: &LabeledBatch, img: ImageShape) -> Result<Tensor>;
}

impl<F> SaliencyProvider for F
where
    F: Fn(&LabeledBatch, ImageShape) -> Result<Tensor>,
{
    fn saliency(&self, batch: &LabeledBatch, img: ImageShape) -> Result<Tensor> {
        self(batch, img)
    }
}

/// Sum of saliency inside each of the `grid x grid` cells, row-major.
pub fn cell_saliency(map: &[f64], img: ImageShape, grid: usize) -> Vec<f64> {
    let (ch, cw) = (img.height / grid, img.width / grid);
    let mut cells = vec![0.0; grid * grid];
    for y in 0..img.height {
        for x in 0..img.width {
            cells[(y / ch) * grid + x / cw] += map[y * img.width + x];
        }
    }
    cells
}

/// Flags the `k` cells with the largest margins, ties to the lowest index.
pub fn top_k_cells(margins: &[f64], k: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..margins.len()).collect();
    order.sort_by(|&a, &b| margins[b].total_cmp(&margins[a]).then(a.cmp(&b)));
    let mut keep = vec![false; margins.len()];
    for &i in order.iter().take(k) {
        keep[i] = true;
    }
    keep
}

pub fn grid_cells_kept(lambda: f64, grid: usize) -> usize {
    (lambda * (grid * grid) as f64).round() as usize
}

pub(crate) fn check_grid(img: ImageShape, grid: usize) -> Result<()> {
    if grid == 0 || !img.height.is_multiple_of(grid) || !img.width.is_multiple_of(grid) {
        return Err(Error::Parameter(format!(
            "grid {grid} does not divide image {}x{}",
            img.height, img.width
        )));
    }
    Ok(())
}

/// Builds a saliency-grid plan from an explicit lambda, pairing and maps.
pub fn saliency_grid_plan(
    lambda: f64,
    pairing: Vec<usize>,
    maps: &Tensor,
    img: ImageShape,
    grid: usize,
) -> Result<MixPlan> {
    check_grid(img, grid)?;
    let n = pairing.len();
    if maps.shape() != [n, img.height, img.width] {
        return Err(Error::Shape(format!(
            "saliency maps {:?}, expected [{n}, {}, {}]",
            maps.shape(),
            img.height,
            img.width
        )));
    }
    if maps.data().iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::Validation("saliency maps must be non-negative".into()));
    }
    let k = grid_cells_kept(lambda, grid);
    let per_image: Vec<Vec<f64>> = (0..n)
        .map(|i| cell_saliency(maps.row(i), img, grid))
        .collect();
    let cells = (0..n)
        .map(|i| {
            let margins: Vec<f64> = per_image[i]
                .iter()
                .zip(&per_image[pairing[i]])
                .map(|(a, b)| a - b)
                .collect();
            top_k_cells(&margins, k)
        })
        .collect();
    Ok(MixPlan {
        method: Method::SaliencyGrid,
        lambda_raw: lambda,
        lambda_effective: k as f64 / (grid * grid) as f64,
        pairing,
        cell_assignment: Some(cells),
        grid: Some(grid),
        image: Some(img),
        ..MixPlan::identity(0)
    })
}

pub fn saliency_grid_mix(
    batch: &LabeledBatch,
    img: ImageShape,
    alpha: f64,
    grid: usize,
    saliency: &dyn SaliencyProvider,
    stream: &RngStream,
) -> Result<(LabeledBatch, MixPlan)> {
    require_pairs(batch)?;
    img.check(batch)?;
    check_grid(img, grid)?;
    let lambda = draw_lambda(stream, alpha)?;
    let maps = saliency.saliency(batch, img)?;
    let plan = saliency_grid_plan(lambda, draw_pairing(stream, batch.len()), &maps, img, grid)?;
    Ok((apply_plan(batch, &plan)?, plan))
}

/// Models that can report the gradient of the per-sample loss with respect
/// to their inputs.
pub trait InputGradients {
    /// `[batch, features]` gradient of each sample's own cross-entropy.
    fn input_gradients(&self, batch: &LabeledBatch) -> Result<Tensor> {
        let _ = batch;
        Err(Error::Capability("model does not provide input gradients".into()))
    }
}

/// Per-pixel L2 norm over channels of the loss gradient at the true label.
pub fn gradient_saliency<M: InputGradients + ?Sized>(
    model: &M,
    batch: &LabeledBatch,
    img: ImageShape,
) -> Result<Tensor> {
    img.check(batch)?;
    let grads = model.input_gradients(batch)?;
    let mut out = vec![0.0; batch.len() * img.pixels()];
    for i in 0..batch.len() {
        let g = grads.row(i);
        for p in 0..img.pixels() {
            let sq: f64 = (0..img.channels).map(|c| g[c * img.pixels() + p].powi(2)).sum();
            out[i * img.pixels() + p] = sq.sqrt();
        }
    }
    Tensor::new(vec![batch.len(), img.height, img.width], out)
}

/// Saliency from a model's own input gradients.
pub struct GradientSaliency<'a, M: ?Sized>(pub &'a M);

impl<M: InputGradients + ?Sized> SaliencyProvider for GradientSaliency<'_, M> {
    fn saliency(&self, batch: &LabeledBatch, img: ImageShape) -> Result<Tensor> {
        gradient_saliency(self.0, batch, img)
    }
}

/// Which kernel to run and with what parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub method: Method,
    pub alpha: f64,
    #[serde(default)]
    pub image: Option<ImageShape>,
    #[serde(default = "default_grid")]
    pub grid: usize,
}

fn default_grid() -> usize {
    2
}

impl KernelSpec {
    pub fn new(method: Method, alpha: f64) -> Self {
        KernelSpec {
            method,
            alpha,
            image: None,
            grid: default_grid(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Parameter(format!("alpha must be positive, got {}", self.alpha)));
        }
        if matches!(self.method, Method::Cutmix | Method::SaliencyGrid) {
            let img = self.image_shape()?;
            if self.method == Method::SaliencyGrid {
                check_grid(img, self.grid)?;
            }
        }
        Ok(())
    }

    pub fn image_shape(&self) -> Result<ImageShape> {
        self.image
            .ok_or_else(|| Error::Shape(format!("{:?} needs an image shape", self.method)))
    }

    /// Runs the kernel on `batch`. `saliency` is required for the grid method.
    pub fn apply(
        &self,
        batch: &LabeledBatch,
        stream: &RngStream,
        saliency: Option<&dyn SaliencyProvider>,
    ) -> Result<(LabeledBatch, MixPlan)> {
        match self.method {
            Method::None => Ok((batch.clone(), MixPlan::identity(batch.len()))),
            Method::Mixup => mixup(batch, self.alpha, stream),
            Method::Cutmix => cutmix(batch, self.image_shape()?, self.alpha, stream),
            Method::SaliencyGrid => {
                let provider = saliency.ok_or_else(|| {
                    Error::Capability("saliency grid mixing needs a saliency provider".into())
                })?;
                saliency_grid_mix(batch, self.image_shape()?, self.alpha, self.grid, provider, stream)
            }
        }
    }

    /// Label weight the kernel would apply, drawn without touching any batch.
    pub fn sample_lambda_effective(&self, stream: &RngStream) -> Result<f64> {
        match self.method {
            Method::None => Ok(1.0),
            Method::Mixup => draw_lambda(stream, self.alpha),
            Method::Cutmix => {
                Ok(sample_cutmix_plan(self.image_shape()?, 0, self.alpha, stream)?.lambda_effective)
            }
            Method::SaliencyGrid => {
                let k = grid_cells_kept(draw_lambda(stream, self.alpha)?, self.grid);
                Ok(k as f64 / (self.grid * self.grid) as f64)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_batch(n: usize, img: ImageShape, n_classes: usize, seed: u64) -> LabeledBatch {
        let mut s = RngStream::new(seed, 0);
        let data: Vec<f64> = (0..n * img.len()).map(|_| s.normal()).collect();
        let classes: Vec<usize> = (0..n).map(|i| i % n_classes).collect();
        LabeledBatch::from_hard(Tensor::new(vec![n, img.len()], data).unwrap(), &classes, n_classes)
            .unwrap()
    }

    fn row_sums_ok(b: &LabeledBatch) -> bool {
        (0..b.len()).all(|i| (b.labels.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-9)
    }

    #[test]
    fn mixup_identity_hook() {
        let b = image_batch(6, ImageShape::new(1, 4, 4), 3, 1);
        let plan = MixPlan::mixup(1.0, vec![5, 4, 3, 2, 1, 0]);
        assert_eq!(apply_plan(&b, &plan).unwrap(), b);
    }

    #[test]
    fn mixup_half_labels() {
        let f = Tensor::zeros(vec![2, 2]);
        let b = LabeledBatch::from_hard(f, &[3, 7], 10).unwrap();
        let out = apply_plan(&b, &MixPlan::mixup(0.5, vec![1, 0])).unwrap();
        let row = out.labels.row(0);
        assert_eq!(row[3], 0.5);
        assert_eq!(row[7], 0.5);
        assert_eq!(row.iter().filter(|&&v| v != 0.0).count(), 2);
    }

    #[test]
    fn mixup_rows_sum_to_one_and_replay() {
        let b = image_batch(8, ImageShape::new(1, 4, 4), 4, 2);
        for k in 0..50 {
            let s = RngStream::new(3, k);
            let (out, plan) = mixup(&b, 0.4, &s).unwrap();
            assert!(row_sums_ok(&out));
            assert_eq!(apply_plan(&b, &plan).unwrap(), out);
            assert_eq!(plan.lambda_effective, plan.lambda_raw);
        }
    }

    #[test]
    fn mixup_rejects_single_sample() {
        let b = image_batch(1, ImageShape::new(1, 2, 2), 2, 0);
        assert!(matches!(mixup(&b, 1.0, &RngStream::new(0, 0)), Err(Error::Size(_))));
    }

    #[test]
    fn cutmix_box_examples() {
        let img = ImageShape::new(3, 32, 32);
        let cut = cutmix_box(img, 0.75, 16, 16);
        assert_eq!((cut.w, cut.h), (16, 16));
        assert_eq!(cutmix_lambda_effective(img, cut), 0.75);
        let none = cutmix_box(img, 1.0, 0, 0);
        assert_eq!(none.area(), 0);
        assert_eq!(cutmix_lambda_effective(img, none), 1.0);
    }

    #[test]
    fn cutmix_zero_area_is_identity() {
        let img = ImageShape::new(2, 4, 4);
        let b = image_batch(4, img, 2, 5);
        let plan = MixPlan {
            method: Method::Cutmix,
            lambda_raw: 1.0,
            lambda_effective: 1.0,
            pairing: vec![1, 2, 3, 0],
            cut_box: Some(cutmix_box(img, 1.0, 3, 3)),
            image: Some(img),
            ..MixPlan::identity(0)
        };
        assert_eq!(apply_plan(&b, &plan).unwrap(), b);
    }

    #[test]
    fn cutmix_clip_matches_brute_force() {
        // every center position and several cut sizes, including boxes that
        // hang off corners
        let img = ImageShape::new(1, 6, 5);
        for lam in [0.0, 0.1, 0.3, 0.64, 0.9, 0.99, 1.0] {
            for cx in 0..img.width {
                for cy in 0..img.height {
                    let cut = cutmix_box(img, lam, cx, cy);
                    let ratio = (1.0f64 - lam).sqrt();
                    let (cw, chh) = (
                        (img.width as f64 * ratio) as i64,
                        (img.height as f64 * ratio) as i64,
                    );
                    let (bx, by) = (cx as i64 - cw / 2, cy as i64 - chh / 2);
                    let mut count = 0;
                    for y in 0..img.height as i64 {
                        for x in 0..img.width as i64 {
                            if x >= bx && x < bx + cw && y >= by && y < by + chh {
                                count += 1;
                                assert!(cut.contains(x as usize, y as usize));
                            }
                        }
                    }
                    assert_eq!(count, cut.area());
                }
            }
        }
    }

    #[test]
    fn cutmix_requires_image_shape() {
        let b = image_batch(2, ImageShape::new(1, 4, 4), 2, 0);
        let r = cutmix(&b, ImageShape::new(1, 3, 3), 1.0, &RngStream::new(0, 0));
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn cutmix_pixels_have_one_source() {
        let img = ImageShape::new(2, 8, 8);
        let b = image_batch(5, img, 3, 9);
        for k in 0..30 {
            let (out, plan) = cutmix(&b, img, 1.0, &RngStream::new(1, k)).unwrap();
            let cut = plan.cut_box.unwrap();
            for i in 0..b.len() {
                for c in 0..img.channels {
                    for y in 0..img.height {
                        for x in 0..img.width {
                            let off = c * 64 + y * 8 + x;
                            let src = if cut.contains(x, y) { plan.pairing[i] } else { i };
                            assert_eq!(out.features.row(i)[off].to_bits(), b.features.row(src)[off].to_bits());
                        }
                    }
                }
            }
            assert!(row_sums_ok(&out));
        }
    }

    #[test]
    fn grid_top_k_example() {
        let img = ImageShape::new(1, 2, 2);
        // primary saliencies [9,1,1,1], partner all zero
        let maps = Tensor::new(vec![2, 2, 2], vec![9.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let plan = saliency_grid_plan(0.25, vec![1, 0], &maps, img, 2).unwrap();
        assert_eq!(plan.cell_assignment.as_ref().unwrap()[0], vec![true, false, false, false]);
        assert_eq!(plan.lambda_effective, 0.25);
    }

    #[test]
    fn grid_full_keep_is_identity() {
        let img = ImageShape::new(1, 4, 4);
        let b = image_batch(3, img, 3, 4);
        let maps = Tensor::new(vec![3, 4, 4], vec![1.0; 48]).unwrap();
        let plan = saliency_grid_plan(0.97, vec![2, 0, 1], &maps, img, 2).unwrap();
        assert_eq!(plan.lambda_effective, 1.0);
        assert_eq!(apply_plan(&b, &plan).unwrap(), b);
    }

    #[test]
    fn grid_errors() {
        let img = ImageShape::new(1, 4, 4);
        let maps = Tensor::new(vec![2, 4, 4], vec![1.0; 32]).unwrap();
        assert!(matches!(
            saliency_grid_plan(0.5, vec![1, 0], &maps, img, 3),
            Err(Error::Parameter(_))
        ));
        let mut neg = maps.clone();
        neg.data_mut()[5] = -1.0;
        assert!(matches!(
            saliency_grid_plan(0.5, vec![1, 0], &neg, img, 2),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn grid_mix_via_provider() {
        let img = ImageShape::new(1, 4, 4);
        let b = image_batch(4, img, 2, 6);
        let provider = |batch: &LabeledBatch, img: ImageShape| {
            let data = batch.features.data().iter().map(|v| v.abs()).collect();
            Tensor::new(vec![batch.len(), img.height, img.width], data)
        };
        let (out, plan) = saliency_grid_mix(&b, img, 1.0, 2, &provider, &RngStream::new(0, 1)).unwrap();
        assert_eq!(apply_plan(&b, &plan).unwrap(), out);
        assert!(row_sums_ok(&out));
    }

    struct NoGrad;
    impl InputGradients for NoGrad {}

    #[test]
    fn saliency_needs_gradients() {
        let img = ImageShape::new(1, 2, 2);
        let b = image_batch(2, img, 2, 0);
        assert!(matches!(gradient_saliency(&NoGrad, &b, img), Err(Error::Capability(_))));
    }

    #[test]
    fn plan_json_line() {
        let plan = MixPlan::mixup(0.5, vec![1, 0]);
        let line = plan.to_json_line();
        assert!(!line.contains('\n'));
        assert!(line.contains("\"method\":\"mixup\""));
        assert!(line.contains("\"lambda_effective\":0.5"));
        let back: MixPlan = serde_json::from_str(&line).unwrap();
        assert_eq!(back, plan);
    }

    #[test]
    fn identity_plan_invariant() {
        let mut plan = MixPlan::identity(3);
        plan.validate(3).unwrap();
        plan.pairing = vec![1, 0, 2];
        assert!(plan.validate(3).is_err());
        let bad = MixPlan::mixup(0.5, vec![0, 0]);
        assert!(bad.validate(2).is_err());
    }
}
