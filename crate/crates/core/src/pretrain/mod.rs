//! Further pre-training: corpus assembly per scope, sentence-pair and masked
//! example construction, and the joint MLM + NSP training loop.

mod corpus;
mod examples;
mod train;

pub use corpus::{
    assemble_corpus, known_domain, normalize, Corpus, Domain, PretrainScope, ScopeKind, SourceDocuments,
    TokenizedCorpus,
};
pub use examples::{
    apply_masking, build_nsp_pair, make_example, make_examples, trim_pair, MaskingPolicy, NspPair, PretrainExample,
};
pub use train::{
    checkpoint_steps, evaluate_pretraining, further_pretrain, pretrain_loss, pretraining_params, PretrainConfig,
    PretrainEval, PretrainLoss, PretrainReport, PretrainStep,
};
