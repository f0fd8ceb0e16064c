pub mod clustering;
pub mod corpus;
pub mod correlation;
pub mod embeddings;
pub mod extraction;
pub mod features;
pub mod lexicon;
pub mod pipeline;
pub mod synthetic;
pub mod util;
