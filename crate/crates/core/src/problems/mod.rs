//! Problem catalog: closed-form quadratics, softmax regression and a small
//! sigmoid network over heterogeneous synthetic data.

pub mod classification;
pub mod quadratic;
pub mod shards;
pub mod synthetic;

pub use classification::{
    make_logistic_instance, make_mlp_instance, ClassificationLoss, Classifier, LogisticClient, MlpClient,
    SigmoidMlp, SoftmaxLinear,
};
pub use quadratic::{make_quadratic_instance, QuadraticClient, QuadraticInstance};
pub use shards::{read_dataset, write_dataset, Manifest};
pub use synthetic::{generate_synthetic, FederatedDataset, Shard, SyntheticSpec};
