pub mod csrc;
pub mod fp_medsel;
pub mod requirements;
pub mod llm;
pub mod prompts;
pub mod formalizer;
pub mod injector;
pub mod bmc;
pub mod witness;
pub mod evaluation;
pub mod pipeline;
