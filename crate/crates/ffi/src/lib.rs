//! C ABI over the `gnnmoe` crate.
//!
//! Every fallible function returns a [`GnnmoeStatus`]; on failure the
//! message is available from [`gnnmoe_last_error`] on the same thread until
//! the next failing call. Handles are opaque, created by `*_new`/`*_load`/
//! `gnnmoe_train` and released with the matching `*_free`. No function
//! panics across the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gnnmoe::experts::PropagationKind;
use gnnmoe::graph::{generate_sbm, load_dataset, load_splits, make_splits, GraphDataset, GraphOperators, SbmParams};
use gnnmoe::graph::DEFAULT_SPLIT_RATIOS;
use gnnmoe::model::{GnnMoeModel, ModelConfig};
use gnnmoe::rng::RngState;
use gnnmoe::theory::{mirror_descent_update, RoutingInstance};
use gnnmoe::train::{train, TrainConfig};
use gnnmoe::GnnMoeError;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GnnmoeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Domain = 4,
    Io = 5,
    Format = 6,
    NonFinite = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GnnmoePropagation {
    Gcn = 0,
    Sage = 1,
    Gat = 2,
}

impl From<GnnmoePropagation> for PropagationKind {
    fn from(p: GnnmoePropagation) -> Self {
        match p {
            GnnmoePropagation::Gcn => PropagationKind::Gcn,
            GnnmoePropagation::Sage => PropagationKind::Sage,
            GnnmoePropagation::Gat => PropagationKind::Gat,
        }
    }
}

/// Training options; start from [`gnnmoe_train_options_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GnnmoeTrainOptions {
    pub hidden: usize,
    pub blocks: usize,
    pub propagation: GnnmoePropagation,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    /// Routing-entropy coefficient.
    pub lambda: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Seeds initialization, training noise and, absent stored splits, the split.
    pub seed: u64,
}

impl GnnmoeTrainOptions {
    fn to_config(self) -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                hidden: self.hidden,
                blocks: self.blocks,
                prop: self.propagation.into(),
                dropout: self.dropout,
                ..Default::default()
            },
            lr: self.learning_rate,
            weight_decay: self.weight_decay,
            lambda: self.lambda,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
        }
    }
}

/// Opaque graph dataset.
pub struct GnnmoeDataset {
    graph: GraphDataset,
    /// Source directory, for stored splits.
    dir: Option<std::path::PathBuf>,
}

/// Opaque trained model with its final accuracies.
pub struct GnnmoeModel {
    model: GnnMoeModel,
    train_acc: f64,
    val_acc: f64,
    test_acc: f64,
    best_epoch: usize,
    routing_entropy: Vec<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &GnnMoeError) -> GnnmoeStatus {
    match e {
        GnnMoeError::Dimension { .. } => GnnmoeStatus::Dimension,
        GnnMoeError::Domain { .. } => GnnmoeStatus::Domain,
        GnnMoeError::InvalidArgument(_) => GnnmoeStatus::InvalidArgument,
        GnnMoeError::NonFinite(_) => GnnmoeStatus::NonFinite,
        GnnMoeError::MissingFile(_) | GnnMoeError::Io { .. } => GnnmoeStatus::Io,
        GnnMoeError::Format { .. } | GnnMoeError::Json(_) => GnnmoeStatus::Format,
    }
}

struct Failure(GnnmoeStatus, String);

impl From<GnnMoeError> for Failure {
    fn from(e: GnnMoeError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(GnnmoeStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GnnmoeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GnnmoeStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            GnnmoeStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or point to a valid `T` for the returned lifetime.
unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gnnmoe_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

#[no_mangle]
pub extern "C" fn gnnmoe_train_options_default() -> GnnmoeTrainOptions {
    let d = TrainConfig::default();
    GnnmoeTrainOptions {
        hidden: d.model.hidden,
        blocks: d.model.blocks,
        propagation: GnnmoePropagation::Gcn,
        learning_rate: d.lr,
        weight_decay: d.weight_decay,
        dropout: d.model.dropout,
        lambda: d.lambda,
        max_epochs: d.max_epochs,
        patience: d.patience,
        seed: d.seed,
    }
}

/// Loads a dataset directory (`meta.json`, `edges.tsv`, `features.bin`,
/// `labels.tsv`, optional `splits.json`).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gnnmoe_dataset_load(path: *const c_char, out: *mut *mut GnnmoeDataset) -> GnnmoeStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(GnnmoeStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let graph = load_dataset(path)?;
        *out = Box::into_raw(Box::new(GnnmoeDataset {
            graph,
            dir: Some(path.into()),
        }));
        Ok(())
    })
}

/// Two-parameter stochastic block model with balanced classes.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gnnmoe_dataset_generate_sbm(
    nodes: usize,
    classes: usize,
    p_in: f64,
    p_out: f64,
    feature_dim: usize,
    noise: f64,
    seed: u64,
    out: *mut *mut GnnmoeDataset,
) -> GnnmoeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let params = SbmParams {
            nodes,
            classes,
            p_in,
            p_out,
            feature_dim,
            noise,
        };
        let graph = generate_sbm(&params, &mut RngState::new(seed))?;
        *out = Box::into_raw(Box::new(GnnmoeDataset { graph, dir: None }));
        Ok(())
    })
}

/// Number of nodes, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn gnnmoe_dataset_num_nodes(ds: *const GnnmoeDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.graph.num_nodes())
}

/// Number of classes, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn gnnmoe_dataset_num_classes(ds: *const GnnmoeDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.graph.num_classes)
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gnnmoe_dataset_free(ds: *mut GnnmoeDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Trains on the stored split for `options.seed` if the dataset came from a
/// directory with one, otherwise on a stratified split drawn from the seed.
///
/// # Safety
/// `ds` must be a live dataset handle, `options` readable, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gnnmoe_train(
    ds: *const GnnmoeDataset,
    options: *const GnnmoeTrainOptions,
    out: *mut *mut GnnmoeModel,
) -> GnnmoeStatus {
    guard(|| {
        let ds = borrow(ds, "dataset")?;
        let options = borrow(options, "options")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = options.to_config();
        let stored = match &ds.dir {
            Some(dir) => load_splits(dir, cfg.seed, ds.graph.num_nodes())?,
            None => None,
        };
        let splits = match stored {
            Some(s) => s,
            None => make_splits(&ds.graph, DEFAULT_SPLIT_RATIOS, cfg.seed)?,
        };
        let outcome = train(&ds.graph, &splits, &cfg)?;
        let routing_entropy = outcome.routing_entropy();
        *out = Box::into_raw(Box::new(GnnmoeModel {
            train_acc: outcome.train_acc,
            val_acc: outcome.val_acc,
            test_acc: outcome.test_acc,
            best_epoch: outcome.history.best_epoch,
            routing_entropy,
            model: outcome.model,
        }));
        Ok(())
    })
}

/// Train, validation and test accuracy of the selected parameters. Any
/// output pointer may be null.
///
/// # Safety
/// `model` must be a live model handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn gnnmoe_model_accuracy(
    model: *const GnnmoeModel,
    train_acc: *mut f64,
    val_acc: *mut f64,
    test_acc: *mut f64,
) -> GnnmoeStatus {
    guard(|| {
        let m = borrow(model, "model")?;
        for (dst, v) in [(train_acc, m.train_acc), (val_acc, m.val_acc), (test_acc, m.test_acc)] {
            if !dst.is_null() {
                *dst = v;
            }
        }
        Ok(())
    })
}

/// 1-based epoch whose parameters were kept, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn gnnmoe_model_best_epoch(model: *const GnnmoeModel) -> usize {
    model.as_ref().map_or(0, |m| m.best_epoch)
}

/// Writes the mean routing entropy of each mixture block into `out`.
/// `*len` holds the capacity on entry and the block count on return; with
/// too small a buffer nothing is written and `BufferTooSmall` is returned.
///
/// # Safety
/// `model` must be a live model handle; `len` readable and writable; `out`
/// writable for `*len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gnnmoe_model_routing_entropy(
    model: *const GnnmoeModel,
    out: *mut f64,
    len: *mut usize,
) -> GnnmoeStatus {
    guard(|| {
        let m = borrow(model, "model")?;
        if len.is_null() {
            return Err(null("len"));
        }
        let need = m.routing_entropy.len();
        let cap = std::mem::replace(&mut *len, need);
        if cap < need {
            return Err(Failure(GnnmoeStatus::BufferTooSmall, format!("need {need} entries, got {cap}")));
        }
        if need > 0 {
            if out.is_null() {
                return Err(null("out"));
            }
            std::slice::from_raw_parts_mut(out, need).copy_from_slice(&m.routing_entropy);
        }
        Ok(())
    })
}

/// Eval-mode predicted class of every node of `ds` into `out`, which must
/// hold `gnnmoe_dataset_num_nodes(ds)` entries.
///
/// # Safety
/// Handles must be live; `out` writable for `len` entries.
#[no_mangle]
pub unsafe extern "C" fn gnnmoe_model_predict(
    model: *const GnnmoeModel,
    ds: *const GnnmoeDataset,
    out: *mut usize,
    len: usize,
) -> GnnmoeStatus {
    guard(|| {
        let m = borrow(model, "model")?;
        let ds = borrow(ds, "dataset")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let n = ds.graph.num_nodes();
        if len < n {
            return Err(Failure(GnnmoeStatus::BufferTooSmall, format!("need {n} entries, got {len}")));
        }
        let pred = m.model.predict(&GraphOperators::new(&ds.graph), &ds.graph.features)?;
        let out = std::slice::from_raw_parts_mut(out, n);
        for (i, o) in out.iter_mut().enumerate() {
            *o = pred.logits.row_argmax(i);
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gnnmoe_model_free(model: *mut GnnmoeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Closed-form solution of the entropy-regularized, KL-damped routing step
/// over `m` experts: `out ∝ exp((ln base + step·gains) / (1 − step·coeff))`.
///
/// # Safety
/// `base`, `gains` readable and `out` writable for `m` doubles.
#[no_mangle]
pub unsafe extern "C" fn gnnmoe_mirror_descent_update(
    m: usize,
    base: *const f64,
    gains: *const f64,
    step: f64,
    coeff: f64,
    out: *mut f64,
) -> GnnmoeStatus {
    guard(|| {
        if base.is_null() || gains.is_null() || out.is_null() {
            return Err(null("base, gains or out"));
        }
        if m == 0 {
            return Err(Failure(GnnmoeStatus::InvalidArgument, "m must be positive".into()));
        }
        let inst = RoutingInstance {
            base: std::slice::from_raw_parts(base, m).to_vec(),
            gains: std::slice::from_raw_parts(gains, m).to_vec(),
            step,
            coeff,
        };
        let pi = mirror_descent_update(&inst)?;
        std::slice::from_raw_parts_mut(out, m).copy_from_slice(&pi);
        Ok(())
    })
}
