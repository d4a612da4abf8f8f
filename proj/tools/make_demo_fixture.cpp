// Regenerates data/demo/fixture.jsonl: a deterministic score fixture for the
// shipped demo matrix config, recorded from the seeded synthetic model.
#include <iostream>

#include "biaslens/domain.hpp"
#include "biaslens/experiment.hpp"
#include "biaslens/provider.hpp"

using namespace biaslens;

int main(int argc, char** argv) {
  const std::string out = argc > 1 ? argv[1] : "data/demo/fixture.jsonl";

  std::vector<std::string> vocabulary = {" He", " She", " They",
                                         " the", " of", " was"};
  const Catalog catalog = builtin_catalog();
  for (GenderCategory cat : kGenderCategories) {
    for (const std::string& form :
         expand_verbalizations(at(catalog.verbalizations, cat))) {
      vocabulary.push_back(form);
    }
  }
  SyntheticVocabProvider provider(vocabulary, 7, "demo");

  RunConfig config;
  config.task_ids = {1, 2};
  config.debias_ids = {1, 4};
  config.positionings = {Positioning::Inline, Positioning::Dialogue};
  config.job_names = {"nurse", "plumber"};

  const std::vector<ScoreRequest> requests =
      enumerate_matrix_requests(config, catalog);
  record_fixture(provider, requests, out);
  std::cerr << "wrote " << requests.size() << " records to " << out << "\n";
  return 0;
}
