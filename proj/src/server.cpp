#include "sidlab/server.hpp"

#include <chrono>

#include <httplib.h>

#include "sidlab/io.hpp"
#include "sidlab/rng.hpp"

namespace sidlab {

using nlohmann::json;

void save_keyed_model(const KeyedModel& keyed, const json& train_config,
                      const std::filesystem::path& dir) {
    save_sid_model(keyed.model, train_config, dir);
    Checkpoint det;
    det.kind = "mlp";
    det.arch = keyed.detector.arch.to_json();
    det.train_config = train_config;
    det.extra = {{"role", "detector"},
                 {"validation_accuracy", keyed.detector.validation_accuracy}};
    det.params = keyed.detector.params;
    det.aux.emplace_back("feature_mean", keyed.detector.stats.mean);
    det.aux.emplace_back("feature_var", keyed.detector.stats.var);
    save_checkpoint(det, dir / "detector");
}

NoiseDetector load_noise_detector(const std::filesystem::path& dir) {
    Checkpoint ckpt = load_checkpoint(dir);
    if (ckpt.kind != "mlp" || ckpt.extra.value("role", "") != "detector")
        throw std::runtime_error("checkpoint is not a noise detector");
    NoiseDetector det;
    det.arch = nn::MlpArch::from_json(ckpt.arch);
    det.params = std::move(ckpt.params);
    det.validation_accuracy = ckpt.extra.at("validation_accuracy").get<double>();
    for (auto& [name, data] : ckpt.aux) {
        if (name == "feature_mean") det.stats.mean = data;
        if (name == "feature_var") det.stats.var = data;
    }
    return det;
}

struct ModelServer::Impl {
    ServeConfig config;
    SidModel model;
    std::optional<NoiseDetector> detector;
    httplib::Server server;
    std::thread thread;
    std::atomic<int> in_flight{0};
    std::atomic<uint64_t> query_counter{0};
    uint64_t key_nonce = 0;
    int port = 0;
};

ModelServer::ModelServer(ServeConfig config) : impl_(std::make_unique<Impl>()) {
    impl_->config = std::move(config);
    impl_->model = load_sid_model(impl_->config.checkpoint);
    if (impl_->model.defense.value("kind", "") == "key")
        impl_->detector = load_noise_detector(impl_->config.checkpoint / "detector");
    impl_->key_nonce =
        impl_->config.key_rng_seed != 0
            ? impl_->config.key_rng_seed
            : static_cast<uint64_t>(
                  std::chrono::steady_clock::now().time_since_epoch().count());

    auto& server = impl_->server;
    Impl* impl = impl_.get();

    server.Get("/v1/info", [impl](const httplib::Request&, httplib::Response& res) {
        const json info = {{"n_classes", impl->model.n_classes()},
                           {"defense", impl->model.defense.value("kind", "none")},
                           {"obfuscation", impl->config.obfuscation.to_string()},
                           {"serving_temperature", impl->model.serving_temperature},
                           {"format_version", 1}};
        res.set_content(info.dump(), "application/json");
    });

    server.Post("/v1/classify", [impl](const httplib::Request& req, httplib::Response& res) {
        struct Gate {
            std::atomic<int>& n;
            bool admitted;
            Gate(std::atomic<int>& n_, int limit) : n(n_) {
                admitted = n.fetch_add(1) < limit;
            }
            ~Gate() { n.fetch_sub(1); }
        } gate(impl->in_flight, impl->config.max_concurrent);
        if (!gate.admitted) {
            res.status = 503;
            res.set_content(json{{"error", "over concurrency limit"}}.dump(),
                            "application/json");
            return;
        }

        AudioClip clip;
        try {
            const json body = json::parse(req.body);
            const auto& samples = body.at("samples");
            if (!samples.is_array() ||
                static_cast<int>(samples.size()) != kClipSamples)
                throw std::invalid_argument("samples must hold exactly 48000 floats");
            if (body.at("sample_rate").get<int>() != kSampleRate)
                throw std::invalid_argument("sample_rate must be 16000");
            clip.samples.reserve(kClipSamples);
            for (const auto& v : samples)
                clip.samples.push_back(static_cast<float>(v.get<double>()));
        } catch (const std::exception& e) {
            res.status = 400;
            res.set_content(json{{"error", e.what()}}.dump(), "application/json");
            return;
        }

        try {
            std::vector<float> posterior;
            if (impl->detector) {
                const uint64_t query_seed = seed_combine(
                    impl->key_nonce, impl->query_counter.fetch_add(1));
                posterior =
                    keyed_predict(impl->model, *impl->detector, clip, query_seed);
            } else {
                posterior = predict_posteriors(impl->model, clip);
            }
            const ObfuscatedOutput out = obfuscate(posterior, impl->config.obfuscation);
            json payload;
            switch (out.mode) {
                case ObfuscationConfig::Mode::full: {
                    json arr = json::array();
                    for (float p : out.posteriors) arr.push_back(static_cast<double>(p));
                    payload = {{"posteriors", arr}};
                    break;
                }
                case ObfuscationConfig::Mode::topk: {
                    json arr = json::array();
                    for (const auto& [cls, p] : out.topk)
                        arr.push_back({{"class", cls}, {"p", static_cast<double>(p)}});
                    payload = {{"topk", arr}};
                    break;
                }
                case ObfuscationConfig::Mode::rank:
                    payload = {{"ranks", out.ranks}};
                    break;
            }
            res.set_content(payload.dump(), "application/json");
        } catch (const std::exception& e) {
            res.status = 400;
            res.set_content(json{{"error", e.what()}}.dump(), "application/json");
        }
    });
}

ModelServer::~ModelServer() { stop(); }

int ModelServer::start() {
    auto& impl = *impl_;
    if (impl.thread.joinable()) return impl.port;
    if (impl.config.port == 0) {
        impl.port = impl.server.bind_to_any_port(impl.config.bind_address);
        if (impl.port <= 0) throw std::runtime_error("failed to bind server port");
    } else {
        if (!impl.server.bind_to_port(impl.config.bind_address, impl.config.port))
            throw std::runtime_error("failed to bind server port " +
                                     std::to_string(impl.config.port));
        impl.port = impl.config.port;
    }
    impl.thread = std::thread([&impl] { impl.server.listen_after_bind(); });
    impl.server.wait_until_ready();
    return impl.port;
}

void ModelServer::stop() {
    auto& impl = *impl_;
    if (!impl.thread.joinable()) return;
    impl.server.stop();
    impl.thread.join();
}

const SidModel& ModelServer::model() const { return impl_->model; }

// Client ------------------------------------------------------------------------

namespace {

json post_json(const RemoteEndpoint& endpoint, const std::string& path, const json& body) {
    httplib::Client client(endpoint.host, endpoint.port);
    client.set_read_timeout(60, 0);
    const auto res = client.Post(path, body.dump(), "application/json");
    if (!res) throw RemoteError("endpoint unreachable: " + httplib::to_string(res.error()));
    if (res->status != 200)
        throw RemoteError("endpoint returned status " + std::to_string(res->status) + ": " +
                          res->body);
    return json::parse(res->body);
}

}  // namespace

json remote_info(const RemoteEndpoint& endpoint) {
    httplib::Client client(endpoint.host, endpoint.port);
    const auto res = client.Get("/v1/info");
    if (!res) throw RemoteError("endpoint unreachable: " + httplib::to_string(res.error()));
    if (res->status != 200)
        throw RemoteError("endpoint returned status " + std::to_string(res->status));
    return json::parse(res->body);
}

ObfuscatedOutput remote_classify(const RemoteEndpoint& endpoint, const AudioClip& clip) {
    json samples = json::array();
    for (float v : clip.samples) samples.push_back(static_cast<double>(v));
    const json body = {{"samples", samples}, {"sample_rate", clip.sample_rate}};
    const json reply = post_json(endpoint, "/v1/classify", body);

    ObfuscatedOutput out;
    if (reply.contains("posteriors")) {
        out.mode = ObfuscationConfig::Mode::full;
        for (const auto& v : reply.at("posteriors"))
            out.posteriors.push_back(static_cast<float>(v.get<double>()));
    } else if (reply.contains("topk")) {
        out.mode = ObfuscationConfig::Mode::topk;
        for (const auto& e : reply.at("topk"))
            out.topk.emplace_back(e.at("class").get<int>(),
                                  static_cast<float>(e.at("p").get<double>()));
    } else if (reply.contains("ranks")) {
        out.mode = ObfuscationConfig::Mode::rank;
        out.ranks = reply.at("ranks").get<std::vector<int>>();
    } else {
        throw RemoteError("unrecognized classify response: " + reply.dump());
    }
    return out;
}

AttackMetrics remote_attack(const RemoteEndpoint& endpoint, const AttackModel& attack,
                            double threshold, const Corpus& corpus,
                            const std::vector<ClipRef>& in_refs,
                            const std::vector<ClipRef>& out_refs) {
    if (in_refs.size() != out_refs.size())
        throw std::invalid_argument("attack evaluation pools must be balanced");
    std::vector<AttackFeature> member_features, nonmember_features;
    for (const auto& ref : in_refs)
        member_features.push_back(
            feature_from_obfuscated(remote_classify(endpoint, corpus.clip(ref))));
    for (const auto& ref : out_refs)
        nonmember_features.push_back(
            feature_from_obfuscated(remote_classify(endpoint, corpus.clip(ref))));
    return evaluate_attack_features(attack, threshold, member_features, nonmember_features);
}

}  // namespace sidlab
