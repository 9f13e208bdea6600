#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>

#include "sidlab/attack.hpp"
#include "sidlab/defenses.hpp"

namespace sidlab {

// Keyed checkpoints persist the SID model at dir/ and the detector at
// dir/detector/ so a served model is self-describing.
void save_keyed_model(const KeyedModel& keyed, const nlohmann::json& train_config,
                      const std::filesystem::path& dir);
NoiseDetector load_noise_detector(const std::filesystem::path& dir);

struct ServeConfig {
    std::filesystem::path checkpoint;
    ObfuscationConfig obfuscation;
    std::string bind_address = "127.0.0.1";
    int port = 0;  // 0 = ephemeral
    int max_concurrent = 8;
    uint64_t key_rng_seed = 0;  // 0 derives a nonce from the clock
};

// HTTP serving boundary: POST /v1/classify with {"samples": [...] (48000
// floats), "sample_rate": 16000} answers per obfuscation mode; GET /v1/info
// reports model metadata. Model state is loaded once and immutable.
class ModelServer {
public:
    explicit ModelServer(ServeConfig config);
    ~ModelServer();

    ModelServer(const ModelServer&) = delete;
    ModelServer& operator=(const ModelServer&) = delete;

    int start();  // binds and serves on a background thread; returns the port
    void stop();

    const SidModel& model() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

struct RemoteEndpoint {
    std::string host = "127.0.0.1";
    int port = 0;
};

// Network or protocol failures surface as RemoteError, never as metrics.
class RemoteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

nlohmann::json remote_info(const RemoteEndpoint& endpoint);
ObfuscatedOutput remote_classify(const RemoteEndpoint& endpoint, const AudioClip& clip);

// Queries the endpoint per clip, converts responses to attack features as far
// as their information allows, and evaluates at the given threshold.
AttackMetrics remote_attack(const RemoteEndpoint& endpoint, const AttackModel& attack,
                            double threshold, const Corpus& corpus,
                            const std::vector<ClipRef>& in_refs,
                            const std::vector<ClipRef>& out_refs);

}  // namespace sidlab
