//! Stage composition: reranker score overlays and declarative run recipes.

mod overlay;
mod recipe;
mod templates;

pub use overlay::{rerank_overlay, ScoreOverlay, DEFAULT_RERANK_DEPTH};
pub use recipe::{run_recipe, Recipe, RecipeContext, Stage, RECIPE_VERSION};
pub use templates::{list_recipes, template, RecipeSummary, Task};
