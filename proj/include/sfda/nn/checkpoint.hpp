#ifndef SFDA_NN_CHECKPOINT_HPP
#define SFDA_NN_CHECKPOINT_HPP

#include <memory>
#include <string>

#include "sfda/nn/model.hpp"

namespace sfda::nn {

// Self-describing versioned container: architecture id + config, dropout rate,
// channel-convention tag, named parameter/buffer blobs, trailing content hash.
void save_checkpoint(SegModel& model, const std::string& path);

// expected_architecture, when non-empty, must match the stored id.
std::unique_ptr<SegModel> load_checkpoint(const std::string& path,
                                          const std::string& expected_architecture = "");

} // namespace sfda::nn

#endif
