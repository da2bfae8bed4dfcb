//! Interactive auditory perception on shake recordings: MFCC features,
//! recurrent material classifiers and weight regressors, a synthetic rattle
//! corpus generator, and the repeated-split evaluation protocol.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod experiments;
pub mod features;
pub mod mfcc;
pub mod nn;
pub mod synth;
pub mod wav;
