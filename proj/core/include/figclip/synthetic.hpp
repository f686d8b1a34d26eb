#pragma once

#include <cstdint>
#include <string>

#include "figclip/annotations.hpp"
#include "figclip/embedding_matrix.hpp"
#include "figclip/encoders.hpp"

namespace figclip {

// Toy-data generator: every frame's token grid is a noisy stack of copies of
// the event's own prompt embedding, so a known alignment exists between the
// visual and text sides. With noise 0 every grid row equals the prompt
// embedding bit-for-bit (after the f32 store), making first-row/token-mean
// oracle recovery exact.
struct PlantedConfig {
    size_t videos = 32;
    size_t events_per_video = 5;  // P
    size_t frames_per_event = 4;  // frame refs per event
    size_t tokens = 16;           // grid tokens per frame
    size_t dim = 64;              // d; grid token feature dim equals dim
    size_t verbs = 8;
    size_t nouns = 24;
    size_t videos_per_movie = 4;
    double noise = 0.1;
    std::string split = "train";
    std::string id_prefix = "v";
};

struct PlantedData {
    Dataset dataset;
    EmbeddingMatrix frames;  // one row per frame ref, flattened [tokens * dim]
};

PlantedData make_planted_data(const PlantedConfig& cfg, const TextEncoder& text, const ParamStore& store,
                              uint64_t seed);

// The oracle linear recovery map: token mean of a grid. At noise 0 the first
// row alone already equals the planted prompt embedding exactly.
Tensor oracle_frame_embedding(const Tensor& grid);

}  // namespace figclip
