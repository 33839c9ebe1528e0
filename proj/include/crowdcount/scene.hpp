#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crowdcount/image.hpp"

namespace crowdcount::synth {

enum class DistractorKind { crate, pole, bush };

struct Placement {
    float x = 0;
    float y = 0;
    float scale = 1.0f;  // unitless, > 0
};

struct Distractor {
    float x = 0;
    float y = 0;
    float scale = 1.0f;
    DistractorKind kind = DistractorKind::crate;
};

// Ground-truth description of a toy crowd scene. Rendering is a pure
// function of this struct, so the pedestrian count is exactly recoverable
// by the harness while staying hidden from training.
struct SceneSpec {
    int width = 0;
    int height = 0;
    std::vector<Placement> pedestrians;
    std::vector<Distractor> distractors;
    std::int64_t background_seed = 0;
    float perspective_factor = 0.0f;  // >= 0; scale shrinks toward the top of the frame

    int pedestrian_count() const { return static_cast<int>(pedestrians.size()); }
};

// Throws std::invalid_argument on zero-area canvas, out-of-bounds
// placements, non-positive scales or negative perspective.
void validate_scene(const SceneSpec& spec);

// Size multiplier applied to objects at vertical position y: 1 at the
// bottom edge, shrinking toward the top.
float perspective_scale(const SceneSpec& spec, float y);

// Rendered half extents of a pedestrian blob (ellipse half-width and
// half-height in pixels). Shared with placement samplers and test oracles.
void pedestrian_half_extents(const SceneSpec& spec, const Placement& p, float& half_w, float& half_h);

// Pedestrians are the only scene content whose red margin exceeds this
// threshold; background and distractors stay below it even after
// anti-alias blending. Test oracles count blobs on this channel.
inline float red_margin(float r, float g, float b) { return r - (g > b ? g : b); }
constexpr float kPedestrianRedMargin = 0.25f;

Image render_scene(const SceneSpec& spec);

// Removes floor(removal_fraction * n) pedestrians chosen uniformly at
// random and appends one distractor at each removed position. The removal
// set is the first k entries of the seeded Fisher-Yates shuffle of
// [0, n); the replacement kinds are drawn next, one per removed index, in
// shuffle order. Width, height and background are unchanged.
SceneSpec remove_pedestrians(const SceneSpec& spec, double removal_fraction, std::uint64_t rng_seed);

// Defaults for the toy corpus samplers.
struct SceneParams {
    int width = 96;
    int height = 96;
    float perspective = 0.4f;
    float scale_min = 0.8f;
    float scale_max = 1.6f;
    int distractors_min = 0;
    int distractors_max = 12;
};

// Uniform placements; overlaps allowed.
SceneSpec sample_scene(const SceneParams& params, int pedestrian_count, std::uint64_t seed);

// Rejection-sampled placements whose rendered bounding boxes do not touch
// each other or the image border; throws DataError when the canvas cannot
// hold the requested count.
SceneSpec sample_scene_non_overlapping(const SceneParams& params, int pedestrian_count, std::uint64_t seed);

}  // namespace crowdcount::synth
