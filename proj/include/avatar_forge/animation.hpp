#pragma once

#include "avatar_forge/body_model.hpp"

#include <string>
#include <vector>

namespace avatar_forge {

struct AnimationFrame {
    PoseParams pose;
    Vector psi;  // expression override; empty when the frame has none
};

// Timestamped pose/expression frames, frame i at time i / fps.
struct AnimationSequence {
    double fps = 30.0;
    std::vector<AnimationFrame> frames;

    size_t size() const { return frames.size(); }
};

// JSON: {"fps": n, "frames": [{"body_pose": [[x,y,z]...], "root_orient": [...],
// "root_transl": [...], "psi": [...]}, ...]}; missing fields are zero.
AnimationSequence parse_sequence(const std::string& json_text, const TemplateModel& model);
AnimationSequence load_sequence(const std::string& path, const TemplateModel& model);
std::string sequence_to_json(const AnimationSequence& sequence);
void save_sequence(const AnimationSequence& sequence, const std::string& path);

// Jaw opening about +X from 0 to max_angle over n frames, body at rest.
AnimationSequence jaw_sweep(const TemplateModel& model, int n, double max_angle);

// Frames sampled during training; jaw pose is the mandatory component.
struct AnimationGallery {
    std::vector<AnimationFrame> frames;

    static AnimationGallery from_sequence(const AnimationSequence& sequence);
    // Evenly spaced jaw openings in [0, max_angle].
    static AnimationGallery jaw_poses(const TemplateModel& model, int n = 9, double max_angle = 0.4);
    void validate(const TemplateModel& model) const;
    size_t size() const { return frames.size(); }
};

}  // namespace avatar_forge
