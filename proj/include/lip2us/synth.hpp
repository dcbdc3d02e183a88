#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "lip2us/image.hpp"

namespace lip2us {

// Paired lip / ultrasound sequences rendered from one scalar articulatory
// latent s(t) in [0,1].
struct SynthSpec {
  std::size_t n_sequences = 2000;
  std::size_t frames_per_sequence = 16;
  std::uint64_t seed = 0;
  std::size_t lip_size = 96;
  std::size_t us_size = 64;

  std::size_t sinusoids = 3;
  double freq_min = 0.02;  // cycles per frame
  double freq_max = 0.12;
  double amplitude = 0.9;  // peak-to-peak swing of the normalised sinusoid sum
  double latent_noise_sd = 0.02;

  double aperture_min = 4.0;  // mouth opening, pixels
  double aperture_max = 36.0;
  double texture_sd = 0.03;

  double apex_min = 16.0;  // tongue apex height above the bottom row, pixels
  double apex_max = 44.0;
  double ridge_sd = 2.0;
  double speckle_sd = 0.1;

  void validate() const;
};

/// s(t) for t in [0, frames_per_sequence); pure function of (seed, index, t).
std::vector<double> latent_path(const SynthSpec& spec, std::size_t seq_index);

double lip_aperture(const SynthSpec& spec, double s);
double apex_height(const SynthSpec& spec, double s);

/// Mouth with vertical aperture lip_aperture(s) over a static skin texture
/// derived from texture_seed.
Frame render_lip(double s, const SynthSpec& spec, std::uint64_t texture_seed);

/// Gaussian-profile bright arc whose apex sits apex_height(s) above the bottom
/// row, with multiplicative speckle drawn from speckle_seed.
Frame render_ultrasound(double s, const SynthSpec& spec, std::uint64_t speckle_seed);

struct Recording {
  std::vector<Frame> lips;
  std::vector<Frame> ultrasound;
  std::vector<double> latent;
};

/// Frames of one sequence, quantised to 8 bits exactly as they are stored on
/// disk.
Recording generate_recording(const SynthSpec& spec, std::size_t seq_index);

/// Writes seq_%06d/{lip,us}/frame_%06d.png and manifest.txt under out_dir.
void gen_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir);

// Helpers shared with the self-checks: rows of the centre column darker than
// the mouth threshold, and the apex height recovered from the contour.
double measure_aperture(const Frame& lip);
double measure_apex_height(const Frame& ultrasound);

}  // namespace lip2us
