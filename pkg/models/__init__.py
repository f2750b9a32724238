# models：领域对象（domain）、配置模型（config）、全局指标（metrics）
